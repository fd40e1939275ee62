use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use dribble_core::config::{TaskMode, TrainConfig};
use dribble_core::error::EvalError;
use dribble_core::eval::{
    compute_tracking_metrics, run_scripted_eval, write_tracking_csv, EvalAgent, EvalReport, EvalSettings,
    TerrainPreset, TrialLog,
};
use dribble_core::ppo::{train, ActorCritic, POLICY_FILE};
use dribble_core::runtime::PolicyBundle;
use dribble_core::teleop::{teleop_serve, TeleopConfig, TeleopSim};
use dribble_core::world::{generate_fall_bank, FallBank};

#[derive(Parser, Debug)]
#[command(name = "dribble", version, about = "Quadruped ball-dribbling simulator, trainer and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a dribbling or recovery policy with PPO.
    Train(TrainArgs),
    /// Run the scripted forward/stop/return protocol on terrain presets.
    Eval(EvalArgs),
    /// Serve a live simulation steered over TCP or WebSocket.
    Teleop(TeleopArgs),
    /// Turn training metrics or trial logs into CSV for plotting.
    Plot(PlotArgs),
    /// Regenerate the bank of fallen states used by recovery resets.
    Fallbank(FallbankArgs),
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModeArg {
    Dribble,
    Recovery,
}

impl From<ModeArg> for TaskMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Dribble => TaskMode::Dribble,
            ModeArg::Recovery => TaskMode::Recovery,
        }
    }
}

#[derive(clap::Args, Debug)]
struct TrainArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the default config as JSON and exit.
    #[arg(long)]
    print_default_config: bool,
    /// Overrides `env.task` from the config.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, default_value = "runs/dribble")]
    out: PathBuf,
    /// Continue from the trainer state in `--out`.
    #[arg(long)]
    resume: bool,
    /// Fall bank for recovery training; generated when absent.
    #[arg(long)]
    fall_bank: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    total_timesteps: Option<u64>,
    #[arg(long)]
    n_envs: Option<usize>,
    /// Stop after this many updates in total.
    #[arg(long)]
    stop_after: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, ValueEnum)]
enum AgentArg {
    Policy,
    Oracle,
    Null,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    /// Preset name (tile, grass, sand, snow) or "all".
    #[arg(long, default_value = "all")]
    preset: String,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "policy")]
    agent: AgentArg,
    /// Dribbling checkpoint; defaults to `<run-dir>/policy.nnck`.
    #[arg(long)]
    dribble: Option<PathBuf>,
    #[arg(long, default_value = "runs/dribble")]
    run_dir: PathBuf,
    #[arg(long)]
    recovery: Option<PathBuf>,
    /// Config for simulator settings; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluation settings JSON (script, loss-of-control thresholds).
    #[arg(long)]
    settings: Option<PathBuf>,
    /// EvalReport output; a JSON array when several presets run.
    #[arg(long, default_value = "eval_report.json")]
    out: PathBuf,
    /// Directory for per-trial logs and tracking CSVs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct TeleopArgs {
    #[arg(long)]
    dribble: PathBuf,
    #[arg(long)]
    recovery: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7070)]
    port: u16,
    /// WebSocket shim port; 0 disables it.
    #[arg(long, default_value_t = 7071)]
    ws_port: u16,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Stop after this many seconds (runs until the simulation fails when
    /// omitted).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum PlotKind {
    /// `metrics.jsonl` from a training run.
    Training,
    /// A trial log JSON written by `eval --log-dir`.
    Tracking,
}

#[derive(clap::Args, Debug)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct FallbankArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "fall_bank.fbnk")]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p).with_context(|| {
            format!("loading {} (`dribble train --print-default-config` shows every field)", p.display())
        }),
        None => Ok(TrainConfig::default()),
    }
}

fn load_bundle(path: &Path) -> Result<PolicyBundle<f32>> {
    if !path.exists() {
        return Err(EvalError::MissingCheckpoint(path.display().to_string()).into());
    }
    let model = ActorCritic::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model.bundle())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    if a.print_default_config {
        println!("{}", serde_json::to_string_pretty(&TrainConfig::default())?);
        return Ok(());
    }
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.env.task = m.into();
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.workers {
        cfg.ppo.workers = w;
    }
    if let Some(t) = a.total_timesteps {
        cfg.ppo.total_timesteps = t;
    }
    if let Some(n) = a.n_envs {
        cfg.ppo.n_envs = n;
    }
    cfg.validate()?;
    let mode = cfg.env.task;
    let bank = match mode {
        TaskMode::Dribble => None,
        TaskMode::Recovery => Some(match &a.fall_bank {
            Some(p) => FallBank::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => {
                log::info!("generating a 1000-state fall bank");
                generate_fall_bank(1000, cfg.seed, &cfg.sim)?
            }
        }),
    };
    let summary = train::<f32>(cfg, mode, &a.out, bank, a.resume, a.stop_after)?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn write_logs(dir: &Path, preset: &str, logs: &[TrialLog]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for log in logs {
        let stem = format!("{preset}_trial{}", log.trial);
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string(log)?)?;
        write_tracking_csv(&dir.join(format!("{stem}_tracking.csv")), &compute_tracking_metrics(&log.samples))?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let mut settings: EvalSettings = match &a.settings {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => EvalSettings::default(),
    };
    settings.trials = a.trials;
    settings.seed = a.seed;
    let presets = if a.preset == "all" {
        TerrainPreset::builtin()
    } else {
        match TerrainPreset::by_name(&a.preset) {
            Some(p) => vec![p],
            None => bail!("unknown preset {:?} (expected tile, grass, sand, snow or all)", a.preset),
        }
    };
    let agent = match a.agent {
        AgentArg::Oracle => EvalAgent::Oracle,
        AgentArg::Null => EvalAgent::Null,
        AgentArg::Policy => {
            let path = a.dribble.clone().unwrap_or_else(|| a.run_dir.join(POLICY_FILE));
            let dribble = load_bundle(&path)?;
            let recovery = a.recovery.as_deref().map(load_bundle).transpose()?;
            EvalAgent::Policy { dribble, recovery }
        }
    };
    let mut reports = Vec::new();
    for p in &presets {
        let (report, logs) = run_scripted_eval(&agent, p, &cfg, &settings)?;
        if let Some(dir) = &a.log_dir {
            write_logs(dir, &p.name, &logs)?;
        }
        reports.push(report);
    }
    let json = if reports.len() == 1 {
        serde_json::to_string_pretty(&reports[0])?
    } else {
        serde_json::to_string_pretty(&reports)?
    };
    fs::write(&a.out, json).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{}", EvalReport::table(&reports));
    Ok(())
}

fn cmd_teleop(a: TeleopArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let dribble = load_bundle(&a.dribble)?;
    let recovery = a.recovery.as_deref().map(load_bundle).transpose()?;
    let sim = TeleopSim::new(cfg, Some(dribble), recovery, a.seed)?;
    let addr = |port: u16| -> Result<SocketAddr> { Ok(format!("{}:{port}", a.host).parse()?) };
    let tcfg = TeleopConfig {
        tcp_addr: addr(a.port)?,
        ws_addr: if a.ws_port == 0 { None } else { Some(addr(a.ws_port)?) },
        ..TeleopConfig::default()
    };
    let handle = teleop_serve(sim, &tcfg)?;
    println!("teleop tcp {}{}", handle.tcp_addr, handle.ws_addr.map(|w| format!(" ws {w}")).unwrap_or_default());
    match a.duration {
        Some(secs) => {
            std::thread::sleep(Duration::from_secs_f64(secs));
            handle.shutdown()?;
        }
        None => handle.wait()?,
    }
    Ok(())
}

/// Flattens one training metrics record into CSV columns.
fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        serde_json::Value::Array(items) => {
            for (i, child) in items.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), child, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn cmd_plot(a: PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    match a.kind {
        PlotKind::Tracking => {
            let log: TrialLog = serde_json::from_str(&text).context("parsing trial log")?;
            write_tracking_csv(&a.out, &compute_tracking_metrics(&log.samples))?;
        }
        PlotKind::Training => {
            let mut w = csv::Writer::from_path(&a.out)?;
            let mut header: Option<Vec<String>> = None;
            for (n, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
                let v: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
                let mut cols = Vec::new();
                flatten("", &v, &mut cols);
                let names: Vec<String> = cols.iter().map(|c| c.0.clone()).collect();
                match &header {
                    None => {
                        w.write_record(&names)?;
                        header = Some(names);
                    }
                    Some(h) if *h != names => bail!("line {}: columns differ from the first record", n + 1),
                    Some(_) => {}
                }
                w.write_record(cols.iter().map(|c| c.1.as_str()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn cmd_fallbank(a: FallbankArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let bank = generate_fall_bank(a.count, a.seed, &cfg.sim)?;
    bank.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} fallen states to {}", bank.len(), a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Teleop(a) => cmd_teleop(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Fallbank(a) => cmd_fallbank(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
