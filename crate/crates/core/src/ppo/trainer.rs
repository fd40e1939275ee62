use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{TaskMode, TrainConfig, NUM_JOINTS};
use crate::env::VecEnv;
use crate::error::{NnError, TrainError};
use crate::nn::{DenseNet, Scalar};
use crate::reward::{DRIBBLE_TERMS, RECOVERY_TERMS};
use crate::rng::{self, SimRng, RUN_STREAM};
use crate::world::FallBank;

use super::gae::{compute_gae, normalize_advantages};
use super::model::ActorCritic;
use super::normalizer::RewardNormalizer;
use super::update::{ppo_update, LossStats, Minibatch, Optimizers};

/// One synchronous rollout, stored step-major: sample `t * n_envs + i` is
/// environment `i` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer<T> {
    pub n_envs: usize,
    pub steps: usize,
    pub obs_width: usize,
    pub est_width: usize,
    pub obs: Vec<T>,
    pub est_pred: Vec<T>,
    pub targets: Vec<T>,
    pub actions: Vec<T>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Rewards after normalization and time-limit bootstrapping.
    pub rewards: Vec<f64>,
    pub raw_rewards: Vec<f64>,
    pub tracking: Vec<f64>,
    pub dones: Vec<bool>,
    pub timeouts: Vec<bool>,
    pub last_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Sum of each weighted reward term over the rollout.
    pub term_sums: Vec<f64>,
    pub episode_returns: Vec<f64>,
}

impl<T: Scalar> RolloutBuffer<T> {
    fn new(n_envs: usize, steps: usize, obs_width: usize, est_width: usize, terms: usize) -> Self {
        let n = n_envs * steps;
        Self {
            n_envs,
            steps,
            obs_width,
            est_width,
            obs: Vec::with_capacity(n * obs_width),
            est_pred: Vec::with_capacity(n * est_width),
            targets: Vec::with_capacity(n * est_width),
            actions: Vec::with_capacity(n * NUM_JOINTS),
            log_probs: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            rewards: Vec::with_capacity(n),
            raw_rewards: Vec::with_capacity(n),
            tracking: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            timeouts: Vec::with_capacity(n),
            last_values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            term_sums: vec![0.0; terms],
            episode_returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_envs * self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// GAE per environment, then (optionally) normalization over the buffer.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, normalize: bool) {
        let (n, t_len) = (self.n_envs, self.steps);
        self.advantages = vec![0.0; n * t_len];
        self.returns = vec![0.0; n * t_len];
        for i in 0..n {
            let col = |v: &Vec<f64>| (0..t_len).map(|t| v[t * n + i]).collect::<Vec<_>>();
            let dones: Vec<bool> = (0..t_len).map(|t| self.dones[t * n + i]).collect();
            let (adv, ret) =
                compute_gae(&col(&self.rewards), &col(&self.values), &dones, self.last_values[i], gamma, lambda);
            for t in 0..t_len {
                self.advantages[t * n + i] = adv[t];
                self.returns[t * n + i] = ret[t];
            }
        }
        if normalize {
            normalize_advantages(&mut self.advantages);
        }
    }

    pub fn gather(&self, rows: &[usize]) -> Minibatch<T> {
        let (w, e) = (self.obs_width, self.est_width);
        let mut mb = Minibatch {
            rows: rows.len(),
            obs: Vec::with_capacity(rows.len() * w),
            est_pred: Vec::with_capacity(rows.len() * e),
            targets: Vec::with_capacity(rows.len() * e),
            actions: Vec::with_capacity(rows.len() * NUM_JOINTS),
            old_log_probs: Vec::with_capacity(rows.len()),
            advantages: Vec::with_capacity(rows.len()),
            returns: Vec::with_capacity(rows.len()),
        };
        for &r in rows {
            mb.obs.extend_from_slice(&self.obs[r * w..(r + 1) * w]);
            mb.est_pred.extend_from_slice(&self.est_pred[r * e..(r + 1) * e]);
            mb.targets.extend_from_slice(&self.targets[r * e..(r + 1) * e]);
            mb.actions.extend_from_slice(&self.actions[r * NUM_JOINTS..(r + 1) * NUM_JOINTS]);
            mb.old_log_probs.push(self.log_probs[r]);
            mb.advantages.push(self.advantages[r]);
            mb.returns.push(self.returns[r]);
        }
        mb
    }

    /// Mean squared error of the recorded estimator outputs per target.
    pub fn estimator_mse(&self) -> Vec<f64> {
        let e = self.est_width;
        let mut mse = vec![0.0; e];
        for (p, t) in self.est_pred.chunks(e.max(1)).zip(self.targets.chunks(e.max(1))) {
            for k in 0..e {
                let d = p[k].as_f64() - t[k].as_f64();
                mse[k] += d * d;
            }
        }
        mse.iter_mut().for_each(|m| *m /= self.len().max(1) as f64);
        mse
    }
}

fn forward_rows<T: Scalar>(net: &DenseNet<T>, x: &[T], chunk_rows: usize) -> Result<Vec<T>, NnError> {
    let w = net.input_width();
    let parts = x.par_chunks(chunk_rows * w).map(|c| net.forward(c, c.len() / w)).collect::<Result<Vec<_>, _>>()?;
    Ok(parts.concat())
}

fn concat_rows<T: Copy>(a: &[T], wa: usize, b: &[T], wb: usize) -> Vec<T> {
    let rows = if wa > 0 { a.len() / wa } else { b.len() / wb.max(1) };
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

fn cast<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|x| T::from_f64(*x)).collect()
}

/// Network outputs for the current observations of every environment.
struct Acting<T> {
    obs: Vec<T>,
    est_pred: Vec<T>,
    targets: Vec<T>,
    values: Vec<f64>,
    actions: Vec<T>,
    log_probs: Vec<f64>,
}

fn act<T: Scalar>(
    model: &ActorCritic<T>,
    envs: &mut VecEnv,
    chunk_rows: usize,
    deterministic: bool,
    with_values: bool,
) -> Result<Acting<T>, NnError> {
    let obs: Vec<T> = cast(&envs.observations());
    let e = model.estimator_width();
    let targets: Vec<T> = if e > 0 { cast(&envs.targets()) } else { Vec::new() };
    let est_pred = match &model.estimator {
        Some(net) => forward_rows(net, &obs, chunk_rows)?,
        None => Vec::new(),
    };
    let w = model.obs_width;
    let mean = forward_rows(&model.policy, &concat_rows(&obs, w, &est_pred, e), chunk_rows)?;
    let values = if with_values {
        forward_rows(&model.critic, &concat_rows(&obs, w, &targets, e), chunk_rows)?
            .iter()
            .map(|v| v.as_f64())
            .collect()
    } else {
        Vec::new()
    };
    let head = &model.head;
    let sampled: Vec<(Vec<T>, f64)> = envs
        .envs
        .par_iter_mut()
        .zip(mean.par_chunks(NUM_JOINTS))
        .map(
            |(env, m)| {
                if deterministic {
                    (m.to_vec(), head.log_prob(m, m))
                } else {
                    head.sample(m, &mut env.policy_rng)
                }
            },
        )
        .collect();
    let mut actions = Vec::with_capacity(mean.len());
    let mut log_probs = Vec::with_capacity(sampled.len());
    for (a, lp) in sampled {
        actions.extend(a);
        log_probs.push(lp);
    }
    Ok(Acting { obs, est_pred, targets, values, actions, log_probs })
}

fn term_names(mode: TaskMode) -> &'static [&'static str] {
    match mode {
        TaskMode::Dribble => &DRIBBLE_TERMS,
        TaskMode::Recovery => &RECOVERY_TERMS,
    }
}

/// Steps every environment `steps_per_rollout` times with the current
/// policy and records everything the update needs.
pub fn collect_rollout<T: Scalar>(
    model: &ActorCritic<T>,
    envs: &mut VecEnv,
    normalizer: &mut RewardNormalizer,
    cfg: &TrainConfig,
    bank: Option<&FallBank>,
    deterministic: bool,
) -> Result<RolloutBuffer<T>, TrainError> {
    let p = &cfg.ppo;
    let n = envs.len();
    let e = model.estimator_width();
    let w = model.obs_width;
    let mut buf = RolloutBuffer::new(n, p.steps_per_rollout, w, e, term_names(envs.mode).len());
    for step in 0..p.steps_per_rollout {
        let a = act(model, envs, p.chunk_rows, deterministic, true)?;
        let actions_f64: Vec<f64> = a.actions.iter().map(|v| v.as_f64()).collect();
        let outcomes = envs.step(&actions_f64, cfg, bank, step)?;

        let mut rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
        let dones: Vec<bool> = outcomes.iter().map(|o| o.done).collect();
        for o in &outcomes {
            buf.raw_rewards.push(o.reward);
            buf.tracking.push(o.tracking);
            buf.timeouts.push(o.timeout);
            for (s, t) in buf.term_sums.iter_mut().zip(&o.breakdown.terms) {
                *s += t.weighted;
            }
        }
        buf.episode_returns.extend(outcomes.iter().filter_map(|o| o.episode_return));
        if p.normalize_rewards {
            normalizer.normalize(&mut rewards, &dones);
        }
        // Time limits are not failures: bootstrap with the critic's value
        // of the final state.
        let timed_out: Vec<usize> = (0..n).filter(|&i| outcomes[i].terminal.is_some()).collect();
        if !timed_out.is_empty() {
            let mut x: Vec<T> = Vec::with_capacity(timed_out.len() * (w + e));
            for &i in &timed_out {
                let (obs, targets) = outcomes[i].terminal.as_ref().unwrap();
                x.extend(obs.iter().map(|v| T::from_f64(*v)));
                x.extend(targets[..e].iter().map(|v| T::from_f64(*v)));
            }
            let v = forward_rows(&model.critic, &x, p.chunk_rows)?;
            for (k, &i) in timed_out.iter().enumerate() {
                rewards[i] += p.gamma * v[k].as_f64();
            }
        }
        buf.obs.extend_from_slice(&a.obs);
        buf.est_pred.extend_from_slice(&a.est_pred);
        buf.targets.extend_from_slice(&a.targets);
        buf.actions.extend_from_slice(&a.actions);
        buf.log_probs.extend_from_slice(&a.log_probs);
        buf.values.extend_from_slice(&a.values);
        buf.rewards.extend_from_slice(&rewards);
        buf.dones.extend_from_slice(&dones);
    }
    let obs: Vec<T> = cast(&envs.observations());
    let targets: Vec<T> = if e > 0 { cast(&envs.targets()) } else { Vec::new() };
    buf.last_values = forward_rows(&model.critic, &concat_rows(&obs, w, &targets, e), p.chunk_rows)?
        .iter()
        .map(|v| v.as_f64())
        .collect();
    if buf.values.iter().chain(&buf.rewards).any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteLoss {
            epoch: 0,
            minibatch: 0,
            detail: "non-finite value or reward in rollout".into(),
        });
    }
    Ok(buf)
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState<T> {
    pub config: TrainConfig,
    pub model: ActorCritic<T>,
    pub optimizers: Optimizers<T>,
    pub envs: VecEnv,
    pub normalizer: RewardNormalizer,
    pub run_rng: SimRng,
    pub updates: u64,
    pub env_steps: u64,
}

pub struct Trainer<T> {
    pub state: TrainerState<T>,
    pub bank: Option<FallBank>,
    pool: rayon::ThreadPool,
}

fn build_pool(workers: usize) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    b.build().expect("thread pool")
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig, mode: TaskMode, bank: Option<FallBank>) -> Result<Self, TrainError> {
        config.validate()?;
        let pool = build_pool(config.ppo.workers);
        let mut run_rng = rng::stream(config.seed, RUN_STREAM);
        let model = ActorCritic::new(mode, config.env.history_len, &config.nets, &config.sim.robot, &mut run_rng);
        let optimizers = Optimizers::new(&model, &config.ppo);
        let envs = pool.install(|| VecEnv::new(mode, config.ppo.n_envs, &config, bank.as_ref()))?;
        let normalizer = RewardNormalizer::new(config.ppo.n_envs, config.ppo.gamma);
        let state = TrainerState { config, model, optimizers, envs, normalizer, run_rng, updates: 0, env_steps: 0 };
        Ok(Self { state, bank, pool })
    }

    pub fn from_state(state: TrainerState<T>, bank: Option<FallBank>) -> Self {
        let pool = build_pool(state.config.ppo.workers);
        Self { state, bank, pool }
    }

    /// Overrides the worker count (results are unaffected).
    pub fn set_workers(&mut self, workers: usize) {
        self.pool = build_pool(workers);
    }

    pub fn collect(&mut self) -> Result<RolloutBuffer<T>, TrainError> {
        let s = &mut self.state;
        let bank = self.bank.as_ref();
        self.pool.install(|| collect_rollout(&s.model, &mut s.envs, &mut s.normalizer, &s.config, bank, false))
    }

    pub fn update(&mut self, buf: &mut RolloutBuffer<T>) -> Result<LossStats, TrainError> {
        let s = &mut self.state;
        let p = &s.config.ppo;
        buf.compute_advantages(p.gamma, p.lambda, p.normalize_advantages);
        let stats = self.pool.install(|| ppo_update(&mut s.model, &mut s.optimizers, buf, p, &mut s.run_rng))?;
        s.updates += 1;
        s.env_steps += buf.len() as u64;
        Ok(stats)
    }

    /// One collect + update cycle; returns the metrics record.
    pub fn iterate(&mut self) -> Result<serde_json::Value, TrainError> {
        let start = Instant::now();
        let mut buf = self.collect()?;
        let est_mse = buf.estimator_mse();
        let loss = self.update(&mut buf)?;
        let elapsed = start.elapsed().as_secs_f64();
        let n = buf.len() as f64;
        let names = term_names(self.state.envs.mode);
        let terms: serde_json::Map<String, serde_json::Value> =
            names.iter().zip(&buf.term_sums).map(|(k, v)| (k.to_string(), (v / n).into())).collect();
        let ep = &buf.episode_returns;
        Ok(serde_json::json!({
            "update": self.state.updates,
            "env_steps": self.state.env_steps,
            "iteration_s": elapsed,
            "steps_per_s": n / elapsed.max(1e-9),
            "loss": loss.summary(),
            "reward": {
                "total": buf.raw_rewards.iter().sum::<f64>() / n,
                "tracking": buf.tracking.iter().sum::<f64>() / n,
                "terms": terms,
            },
            "estimator_mse": est_mse,
            "estimator_drag_mse": est_mse.get(5).copied(),
            "episodes": ep.len(),
            "mean_episode_return": if ep.is_empty() { None } else { Some(ep.iter().sum::<f64>() / ep.len() as f64) },
            "action_std": self.state.model.head.std().iter().sum::<f64>() / NUM_JOINTS as f64,
        }))
    }

    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        let text = serde_json::to_string(&self.state).map_err(|e| TrainError::Decode(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load_state(path: &Path) -> Result<TrainerState<T>, TrainError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| TrainError::Decode(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub updates: u64,
    pub env_steps: u64,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

pub const STATE_FILE: &str = "trainer_state.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const POLICY_FILE: &str = "policy.nnck";

fn write_checkpoint<T: Scalar>(trainer: &Trainer<T>, run_dir: &Path) -> Result<PathBuf, TrainError> {
    let s = &trainer.state;
    let meta = serde_json::json!({ "update": s.updates, "env_steps": s.env_steps });
    let dir = run_dir.join("checkpoints");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("update_{:06}.nnck", s.updates));
    let hash = s.config.hash();
    s.model.save(&path, &hash, meta.clone())?;
    s.model.save(&run_dir.join(POLICY_FILE), &hash, meta)?;
    trainer.save_state(&run_dir.join(STATE_FILE))?;
    Ok(path)
}

/// Training loop: collect, update, log a metrics line, and checkpoint every
/// `checkpoint_every` updates and at the end.
///
/// With `resume`, continues from `run_dir/trainer_state.json` when present.
/// `stop_after` ends the run early after that many updates in total.
pub fn train<T: Scalar>(
    config: TrainConfig,
    mode: TaskMode,
    run_dir: &Path,
    bank: Option<FallBank>,
    resume: bool,
    stop_after: Option<u64>,
) -> Result<TrainSummary, TrainError> {
    config.validate()?;
    fs::create_dir_all(run_dir)?;
    let state_path = run_dir.join(STATE_FILE);
    let mut trainer = if resume && state_path.exists() {
        let state = Trainer::<T>::load_state(&state_path)?;
        if state.config.hash() != config.hash() {
            return Err(TrainError::Decode("saved trainer state was produced by a different config".into()));
        }
        log::info!("resuming at update {} ({} env steps)", state.updates, state.env_steps);
        Trainer::from_state(state, bank)
    } else {
        fs::write(run_dir.join("config.json"), serde_json::to_string_pretty(&config).expect("config serializes"))?;
        let _ = fs::remove_file(run_dir.join(METRICS_FILE));
        Trainer::new(config, mode, bank)?
    };
    let mut metrics = OpenOptions::new().create(true).append(true).open(run_dir.join(METRICS_FILE))?;
    let per_update = trainer.state.config.ppo.samples_per_rollout() as u64;
    let total = trainer.state.config.ppo.total_timesteps;
    let every = trainer.state.config.ppo.checkpoint_every;
    let mut checkpoints = Vec::new();
    let mut last = None;
    while trainer.state.env_steps + per_update <= total.max(per_update)
        && stop_after.is_none_or(|s| trainer.state.updates < s)
    {
        let record = trainer.iterate()?;
        writeln!(metrics, "{record}")?;
        log::info!(
            "update {} steps {} reward {:.4} tracking {:.4}",
            trainer.state.updates,
            trainer.state.env_steps,
            record["reward"]["total"].as_f64().unwrap_or(f64::NAN),
            record["reward"]["tracking"].as_f64().unwrap_or(f64::NAN)
        );
        if trainer.state.updates % every == 0 {
            let p = write_checkpoint(&trainer, run_dir)?;
            checkpoints.push(p.clone());
            last = Some(p);
        }
        if trainer.state.env_steps >= total {
            break;
        }
    }
    let needs_final = last.as_ref().is_none_or(|_| trainer.state.updates % every != 0);
    if needs_final {
        let p = write_checkpoint(&trainer, run_dir)?;
        checkpoints.push(p.clone());
        last = Some(p);
    }
    Ok(TrainSummary {
        updates: trainer.state.updates,
        env_steps: trainer.state.env_steps,
        final_checkpoint: last.expect("at least one checkpoint"),
        checkpoints,
    })
}

/// Behaviour statistics of a policy on fresh environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub steps: usize,
    pub mean_tracking: f64,
    pub mean_reward: f64,
    pub drag_mse: f64,
}

/// Runs the (stochastic) policy for `steps` control steps on `n_envs` fresh
/// environments seeded with `seed`.
pub fn policy_statistics<T: Scalar>(
    model: &ActorCritic<T>,
    cfg: &TrainConfig,
    n_envs: usize,
    steps: usize,
    seed: u64,
    bank: Option<&FallBank>,
) -> Result<PolicyStats, TrainError> {
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let mut envs = VecEnv::new(model.mode, n_envs, &cfg, bank)?;
    let (mut tracking, mut reward, mut drag, mut count) = (0.0, 0.0, 0.0, 0usize);
    let e = model.estimator_width();
    for step in 0..steps {
        let a = act(model, &mut envs, cfg.ppo.chunk_rows, false, false)?;
        if e > 0 {
            for i in 0..n_envs {
                let d = a.est_pred[i * e + 5].as_f64() - a.targets[i * e + 5].as_f64();
                drag += d * d;
            }
        }
        let actions: Vec<f64> = a.actions.iter().map(|v| v.as_f64()).collect();
        for o in envs.step(&actions, &cfg, bank, step)? {
            tracking += o.tracking;
            reward += o.reward;
            count += 1;
        }
    }
    let n = count.max(1) as f64;
    Ok(PolicyStats { steps: count, mean_tracking: tracking / n, mean_reward: reward / n, drag_mse: drag / n })
}
