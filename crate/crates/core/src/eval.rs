//! Terrain presets, the scripted dribbling protocol and its metrics.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{TaskMode, TrainConfig, NUM_JOINTS, NUM_LEGS};
use crate::error::{EvalError, RuntimeError};
use crate::nn::Scalar;
use crate::randomization::{EpisodeDynamics, RandomizationRanges};
use crate::reward::wrap_angle;
use crate::rng::{self, SimRng};
use crate::runtime::{fsm_transition, global_frame_command, ControlRuntime, FsmMode, FsmState, PolicyBundle};
use crate::world::{reset_world, step_world, Action, WorldState};

/// Ground surface used for evaluation. Coefficients are estimates; the
/// named surfaces come without measured values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainPreset {
    pub name: String,
    pub drag_coeff: f64,
    pub friction: f64,
    pub restitution: f64,
    #[serde(default)]
    pub perlin_magnitude: Option<f64>,
}

impl TerrainPreset {
    fn new(name: &str, drag_coeff: f64, friction: f64) -> Self {
        Self { name: name.into(), drag_coeff, friction, restitution: 0.5, perlin_magnitude: None }
    }

    pub fn builtin() -> Vec<TerrainPreset> {
        vec![
            Self::new("tile", 0.1, 0.9),
            Self::new("grass", 1.2, 0.8),
            Self::new("sand", 0.7, 0.45),
            Self::new("snow", 0.6, 0.4),
        ]
    }

    pub fn by_name(name: &str) -> Option<TerrainPreset> {
        Self::builtin().into_iter().find(|p| p.name == name)
    }

    /// Names of parameters that fall outside the training ranges.
    pub fn out_of_distribution(&self, ranges: &RandomizationRanges) -> Vec<&'static str> {
        let inside = |r: [f64; 2], v: f64| v >= r[0] && v <= r[1];
        let mut out = Vec::new();
        if !inside(ranges.drag_coeff, self.drag_coeff) {
            out.push("drag_coeff");
        }
        if !inside(ranges.friction, self.friction) {
            out.push("friction");
        }
        if !inside(ranges.restitution, self.restitution) {
            out.push("restitution");
        }
        if let Some(m) = self.perlin_magnitude {
            if !inside(ranges.perlin_magnitude, m) {
                out.push("perlin_magnitude");
            }
        }
        out
    }

    pub fn dynamics(&self) -> EpisodeDynamics {
        let mut d = EpisodeDynamics::nominal(TaskMode::Dribble);
        d.drag_coeff = self.drag_coeff;
        d.friction = self.friction;
        d.restitution = self.restitution;
        d.perlin_magnitude = self.perlin_magnitude.unwrap_or(0.0);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptPhase {
    /// Global-frame ball velocity command (m/s).
    pub command: [f64; 2],
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrajectory {
    pub phases: Vec<ScriptPhase>,
}

impl Default for ScriptedTrajectory {
    /// Forward at 1.5 m/s for 10 s, stop for 5 s, then return.
    fn default() -> Self {
        let phase = |vx: f64, duration: f64| ScriptPhase { command: [vx, 0.0], duration };
        Self { phases: vec![phase(1.5, 10.0), phase(0.0, 5.0), phase(-1.5, 10.0)] }
    }
}

impl ScriptedTrajectory {
    pub fn validate(&self) -> Result<(), String> {
        if self.phases.is_empty() {
            return Err("script has no phases".into());
        }
        match self.phases.iter().position(|p| !(p.duration > 0.0)) {
            Some(i) => Err(format!("phase {i} has non-positive duration")),
            None => Ok(()),
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Command in effect at time `t`; zero after the script ends.
    pub fn command_at(&self, t: f64) -> Vector2<f64> {
        let mut end = 0.0;
        for p in &self.phases {
            end += p.duration;
            if t < end {
                return Vector2::new(p.command[0], p.command[1]);
            }
        }
        Vector2::zeros()
    }
}

/// When a trial counts as having lost the ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossOfControl {
    pub distance: f64,
    pub duration: f64,
    /// Also watch the ball's distance from where the script would have put
    /// it, so a robot that never moves the ball is caught.
    pub track_reference: bool,
}

impl Default for LossOfControl {
    fn default() -> Self {
        Self { distance: 2.0, duration: 5.0, track_reference: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureCause {
    #[serde(rename = "loss of control")]
    LossOfControl,
    #[serde(rename = "simulation diverged")]
    SimulationDiverged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub cause: FailureCause,
    pub time: f64,
}

/// One control-step sample of a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogSample {
    pub t: f64,
    /// World-frame command.
    pub command: [f64; 2],
    pub ball_pos: [f64; 2],
    pub ball_vel: [f64; 2],
    pub robot_pos: [f64; 2],
    pub reference: [f64; 2],
    pub mode: FsmMode,
}

impl LogSample {
    fn robot_ball_distance(&self) -> f64 {
        dist(self.robot_pos, self.ball_pos)
    }

    fn reference_distance(&self) -> f64 {
        dist(self.reference, self.ball_pos)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Flags the first moment a watched distance has stayed above
/// `cfg.distance` for longer than `cfg.duration`.
pub fn detect_loss_of_control(log: &[LogSample], cfg: &LossOfControl) -> Option<Failure> {
    let mut since: Option<f64> = None;
    for s in log {
        let far =
            s.robot_ball_distance() > cfg.distance || (cfg.track_reference && s.reference_distance() > cfg.distance);
        if !far {
            since = None;
            continue;
        }
        let start = *since.get_or_insert(s.t);
        if s.t - start > cfg.duration {
            return Some(Failure { cause: FailureCause::LossOfControl, time: s.t });
        }
    }
    None
}

/// Ball velocity tracking in polar form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub t: Vec<f64>,
    pub ball_speed: Vec<f64>,
    pub command_speed: Vec<f64>,
    pub ball_heading: Vec<f64>,
    pub command_heading: Vec<f64>,
    pub heading_error: Vec<f64>,
    pub mean_speed_error: f64,
    /// Mean |heading error| over samples whose command speed exceeds
    /// `HEADING_MIN_SPEED`.
    pub mean_heading_error: f64,
}

/// Headings of slower commands are too noisy to score.
pub const HEADING_MIN_SPEED: f64 = 0.1;

fn heading(v: [f64; 2]) -> f64 {
    wrap_angle(v[1].atan2(v[0]))
}

pub fn compute_tracking_metrics(log: &[LogSample]) -> TrackingMetrics {
    let mut m = TrackingMetrics {
        t: Vec::with_capacity(log.len()),
        ball_speed: Vec::with_capacity(log.len()),
        command_speed: Vec::with_capacity(log.len()),
        ball_heading: Vec::with_capacity(log.len()),
        command_heading: Vec::with_capacity(log.len()),
        heading_error: Vec::with_capacity(log.len()),
        mean_speed_error: 0.0,
        mean_heading_error: 0.0,
    };
    let (mut speed_sum, mut heading_sum, mut heading_n) = (0.0, 0.0, 0usize);
    for s in log {
        let vb = s.ball_vel[0].hypot(s.ball_vel[1]);
        let vc = s.command[0].hypot(s.command[1]);
        let (hb, hc) = (heading(s.ball_vel), heading(s.command));
        let err = wrap_angle(hb - hc);
        m.t.push(s.t);
        m.ball_speed.push(vb);
        m.command_speed.push(vc);
        m.ball_heading.push(hb);
        m.command_heading.push(hc);
        m.heading_error.push(err);
        speed_sum += (vb - vc).abs();
        if vc > HEADING_MIN_SPEED {
            heading_sum += err.abs();
            heading_n += 1;
        }
    }
    if !log.is_empty() {
        m.mean_speed_error = speed_sum / log.len() as f64;
    }
    if heading_n > 0 {
        m.mean_heading_error = heading_sum / heading_n as f64;
    }
    m
}

/// Writes the tracking series as CSV for an external plotter.
pub fn write_tracking_csv(path: &Path, m: &TrackingMetrics) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["t", "ball_speed", "command_speed", "ball_heading", "command_heading", "heading_error"])
        .map_err(csv_err)?;
    for i in 0..m.t.len() {
        let row =
            [m.t[i], m.ball_speed[i], m.command_speed[i], m.ball_heading[i], m.command_heading[i], m.heading_error[i]];
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> EvalError {
    EvalError::Io(std::io::Error::other(e))
}

/// Who drives the robot during a trial.
#[derive(Debug, Clone)]
pub enum EvalAgent<T> {
    /// Moves the ball at exactly the commanded velocity and carries the
    /// robot behind it. Checks the harness, not a controller.
    Oracle,
    /// Zero actions: the robot holds its stand pose.
    Null,
    Policy {
        dribble: PolicyBundle<T>,
        recovery: Option<PolicyBundle<T>>,
    },
}

impl<T> EvalAgent<T> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalAgent::Oracle => "oracle",
            EvalAgent::Null => "null",
            EvalAgent::Policy { .. } => "policy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub trials: usize,
    pub seed: u64,
    pub script: ScriptedTrajectory,
    pub loss: LossOfControl,
    /// Ball start distance ahead of the robot (m).
    pub ball_offset: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            trials: 4,
            seed: 0,
            script: ScriptedTrajectory::default(),
            loss: LossOfControl::default(),
            ball_offset: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub success: bool,
    pub failure: Option<Failure>,
    pub falls: usize,
    pub recoveries: usize,
    /// Mean |v_ball - v_cmd| over the trial (m/s).
    pub mean_velocity_error: f64,
    /// Robot path length in the ground plane (m).
    pub distance_traveled: f64,
}

impl TrialResult {
    fn from_log(trial: usize, log: &[LogSample], loss: &LossOfControl, diverged: Option<f64>) -> Self {
        let failure = match diverged {
            Some(time) => Some(Failure { cause: FailureCause::SimulationDiverged, time }),
            None => detect_loss_of_control(log, loss),
        };
        let (mut falls, mut recoveries) = (0, 0);
        for w in log.windows(2) {
            match (w[0].mode, w[1].mode) {
                (FsmMode::Dribble, FsmMode::Recovery) => falls += 1,
                (FsmMode::Recovery, FsmMode::Dribble) => recoveries += 1,
                _ => {}
            }
        }
        let n = log.len().max(1) as f64;
        let mean_velocity_error = log.iter().map(|s| dist(s.ball_vel, s.command)).sum::<f64>() / n;
        let distance_traveled = log.windows(2).map(|w| dist(w[0].robot_pos, w[1].robot_pos)).sum();
        Self { trial, success: failure.is_none(), failure, falls, recoveries, mean_velocity_error, distance_traveled }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub preset: String,
    pub agent: String,
    pub seed: u64,
    pub out_of_distribution: Vec<String>,
    pub trials: Vec<TrialResult>,
    pub successes: usize,
    pub success_fraction: f64,
    /// "k/n", as in a per-terrain success table.
    pub score: String,
}

impl EvalReport {
    pub fn from_trials(
        preset: &TerrainPreset,
        agent: &str,
        seed: u64,
        ood: Vec<String>,
        trials: Vec<TrialResult>,
    ) -> Self {
        let successes = trials.iter().filter(|t| t.success).count();
        let n = trials.len();
        Self {
            preset: preset.name.clone(),
            agent: agent.into(),
            seed,
            out_of_distribution: ood,
            success_fraction: if n == 0 { 0.0 } else { successes as f64 / n as f64 },
            score: format!("{successes}/{n}"),
            successes,
            trials,
        }
    }

    /// Whether the aggregate fields agree with the per-trial records.
    pub fn is_consistent(&self) -> bool {
        let succ = self.trials.iter().filter(|t| t.success).count();
        let n = self.trials.len();
        succ == self.successes && succ <= n && self.score == format!("{succ}/{n}")
    }

    /// Terrain / success table across several reports.
    pub fn table(reports: &[EvalReport]) -> String {
        let mut out = String::from("| Terrain | Agent | Success | Falls | Recoveries |\n|---|---|---|---|---|\n");
        for r in reports {
            let falls: usize = r.trials.iter().map(|t| t.falls).sum();
            let rec: usize = r.trials.iter().map(|t| t.recoveries).sum();
            let name = if r.out_of_distribution.is_empty() { r.preset.clone() } else { format!("{} (ood)", r.preset) };
            out.push_str(&format!("| {name} | {} | {} | {falls} | {rec} |\n", r.agent, r.score));
        }
        out
    }
}

/// Full record of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub trial: usize,
    pub samples: Vec<LogSample>,
}

fn initial_world(
    trial_rng: &mut SimRng,
    dynamics: &EpisodeDynamics,
    cfg: &TrainConfig,
    settings: &EvalSettings,
) -> Result<WorldState, EvalError> {
    let mut env = cfg.env.clone();
    env.reset_ball_radius = 0.0;
    let mut world = reset_world(trial_rng, TaskMode::Dribble, &env, dynamics, &cfg.sim, None)?;
    let yaw = world.robot.yaw_global;
    let p = world.robot.base_position;
    world.ball.position.x = p.x + settings.ball_offset * yaw.cos();
    world.ball.position.y = p.y + settings.ball_offset * yaw.sin();
    world.ball.position.z = world.terrain.height(world.ball.position.x, world.ball.position.y) + world.ball.radius;
    Ok(world)
}

/// Places the robot upright behind the ball, facing along `dir`.
fn carry_robot(world: &mut WorldState, dir: Vector2<f64>, vel: Vector2<f64>, gap: f64, cfg: &TrainConfig) {
    let r = &mut world.robot;
    let yaw = dir.y.atan2(dir.x);
    r.base_orientation = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
    r.base_position.x = world.ball.position.x - gap * dir.x;
    r.base_position.y = world.ball.position.y - gap * dir.y;
    r.base_lin_vel = Vector3::new(vel.x, vel.y, 0.0);
    r.base_ang_vel = Vector3::zeros();
    r.q = cfg.sim.robot.stand_pose;
    r.qd = [0.0; NUM_JOINTS];
    r.foot_anchor = [None; NUM_LEGS];
    r.corner_anchor = [None; 8];
    r.refresh_derived(&cfg.sim.robot);
}

fn run_trial<T: Scalar>(
    agent: &EvalAgent<T>,
    preset: &TerrainPreset,
    trial: usize,
    cfg: &TrainConfig,
    settings: &EvalSettings,
) -> Result<(TrialResult, TrialLog), EvalError> {
    let sim = &cfg.sim;
    let dynamics = preset.dynamics();
    let mut trial_rng = rng::stream(settings.seed, 2 * trial as u64);
    let mut sensor_rng = rng::stream(settings.seed, 2 * trial as u64 + 1);
    let mut world = initial_world(&mut trial_rng, &dynamics, cfg, settings)?;
    let initial_yaw = world.robot.yaw_global;
    let stand = Action::stand(&sim.robot);
    let mut runtime = match agent {
        EvalAgent::Policy { dribble, recovery } => Some(
            ControlRuntime::new(
                &world,
                &sim.robot,
                Some(dribble.clone()),
                recovery.clone(),
                dynamics.action_delay_substeps,
            )
            .with_env_config(&cfg.env),
        ),
        _ => None,
    };
    let mut fsm = FsmState::new(world.time);
    let mut heading_dir = Vector2::new(initial_yaw.cos(), initial_yaw.sin());
    let carry_gap = settings.ball_offset;
    let start = world.ball.position.xy();
    let mut reference = Vector2::new(start.x, start.y);
    let steps = (settings.script.total_duration() / sim.control_dt()).round() as usize;
    let mut samples = Vec::with_capacity(steps);
    let mut diverged = None;

    for _ in 0..steps {
        let raw = settings.script.command_at(world.time);
        let cmd = global_frame_command(raw, initial_yaw);
        let result = match (agent, runtime.as_mut()) {
            (EvalAgent::Policy { .. }, Some(rt)) => {
                let truth = world.ball_in_body();
                rt.camera.update(world.time, &truth, &dynamics, true, &mut sensor_rng);
                let targets =
                    match rt.run_policy_step(&world, raw, &sim.robot, sim.substeps_per_control, &mut sensor_rng) {
                        Ok(t) => t,
                        // No recovery policy: hold the stand pose while fallen.
                        Err(RuntimeError::MissingPolicy("recovery")) => {
                            rt.action_delay.schedule(stand.clone(), world.substep, sim.substeps_per_control)
                        }
                        Err(e) => return Err(e.into()),
                    };
                step_world(&mut world, &targets, &dynamics, sim)
            }
            (EvalAgent::Oracle, _) => {
                world.ball.velocity.x = cmd.x;
                world.ball.velocity.y = cmd.y;
                if cmd.norm() > 1e-6 {
                    heading_dir = cmd.normalize();
                }
                let r = step_world(&mut world, std::slice::from_ref(&stand), &dynamics, sim);
                carry_robot(&mut world, heading_dir, cmd, carry_gap, cfg);
                r
            }
            _ => step_world(&mut world, std::slice::from_ref(&stand), &dynamics, sim),
        };
        if let Err(e) = result {
            log::warn!("trial {trial}: {e}");
            diverged = Some(world.time);
            break;
        }
        reference += cmd * sim.control_dt();
        let (roll, pitch) = world.robot.roll_pitch();
        fsm = fsm_transition(fsm, roll, pitch, world.time);
        let b = &world.ball;
        samples.push(LogSample {
            t: world.time,
            command: [cmd.x, cmd.y],
            ball_pos: [b.position.x, b.position.y],
            ball_vel: [b.velocity.x, b.velocity.y],
            robot_pos: [world.robot.base_position.x, world.robot.base_position.y],
            reference: [reference.x, reference.y],
            mode: fsm.mode,
        });
    }
    let result = TrialResult::from_log(trial, &samples, &settings.loss, diverged);
    Ok((result, TrialLog { trial, samples }))
}

/// Runs the scripted protocol `settings.trials` times on one preset. Trials
/// use independent seeds and run in parallel; the report does not depend on
/// the thread count.
pub fn run_scripted_eval<T: Scalar>(
    agent: &EvalAgent<T>,
    preset: &TerrainPreset,
    cfg: &TrainConfig,
    settings: &EvalSettings,
) -> Result<(EvalReport, Vec<TrialLog>), EvalError> {
    settings.script.validate().map_err(EvalError::Invalid)?;
    let runs: Vec<(TrialResult, TrialLog)> = (0..settings.trials)
        .into_par_iter()
        .map(|i| run_trial(agent, preset, i, cfg, settings))
        .collect::<Result<_, _>>()?;
    let (results, logs): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let ood = preset.out_of_distribution(&cfg.randomization).into_iter().map(String::from).collect();
    Ok((EvalReport::from_trials(preset, agent.name(), settings.seed, ood, results), logs))
}

/// Unwraps a heading series so consecutive samples never jump by more than
/// pi.
pub fn unwrap_headings(h: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(h.len());
    let mut offset = 0.0;
    for (i, &x) in h.iter().enumerate() {
        if i > 0 {
            let d = x - h[i - 1];
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(x + offset);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, d: f64) -> LogSample {
        LogSample {
            t,
            command: [0.0, 0.0],
            ball_pos: [d, 0.0],
            ball_vel: [0.0, 0.0],
            robot_pos: [0.0, 0.0],
            reference: [d, 0.0],
            mode: FsmMode::Dribble,
        }
    }

    fn series(dists: impl Fn(f64) -> f64, secs: f64) -> Vec<LogSample> {
        (0..(secs / 0.02) as usize).map(|k| sample(k as f64 * 0.02, dists(k as f64 * 0.02))).collect()
    }

    #[test]
    fn presets_are_named_and_inside_training_ranges() {
        let names: Vec<_> = TerrainPreset::builtin().into_iter().map(|p| p.name).collect();
        assert_eq!(names, ["tile", "grass", "sand", "snow"]);
        let r = RandomizationRanges::default();
        for p in TerrainPreset::builtin() {
            assert!(p.out_of_distribution(&r).is_empty(), "{}", p.name);
        }
        let mut curb = TerrainPreset::by_name("grass").unwrap();
        curb.drag_coeff = 3.0;
        assert_eq!(curb.out_of_distribution(&r), ["drag_coeff"]);
    }

    #[test]
    fn script_phases() {
        let s = ScriptedTrajectory::default();
        assert_eq!(s.total_duration(), 25.0);
        assert_eq!(s.command_at(0.0), Vector2::new(1.5, 0.0));
        assert_eq!(s.command_at(12.0), Vector2::zeros());
        assert_eq!(s.command_at(15.0), Vector2::new(-1.5, 0.0));
        assert_eq!(s.command_at(30.0), Vector2::zeros());
        let bad = ScriptedTrajectory { phases: vec![ScriptPhase { command: [1.0, 0.0], duration: 0.0 }] };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn close_ball_never_fails() {
        let log = series(|t| 0.5 * (t * 0.7).sin().abs(), 30.0);
        assert_eq!(detect_loss_of_control(&log, &LossOfControl::default()), None);
    }

    #[test]
    fn distant_ball_fails_after_threshold() {
        let log = series(|t| if t >= 2.0 && t < 8.0 { 3.0 } else { 0.2 }, 20.0);
        let f = detect_loss_of_control(&log, &LossOfControl::default()).unwrap();
        assert_eq!(f.cause, FailureCause::LossOfControl);
        assert!(f.time > 7.0 && f.time < 7.1);
        // Four seconds away is tolerated.
        let log = series(|t| if t >= 2.0 && t < 6.0 { 3.0 } else { 0.2 }, 20.0);
        assert_eq!(detect_loss_of_control(&log, &LossOfControl::default()), None);
    }

    #[test]
    fn fall_recovery_and_regain_is_not_failure() {
        let mut log = series(|t| if (5.0..9.0).contains(&t) { 2.5 } else { 0.3 }, 20.0);
        for s in log.iter_mut().filter(|s| (5.0..7.0).contains(&s.t)) {
            s.mode = FsmMode::Recovery;
        }
        let r = TrialResult::from_log(0, &log, &LossOfControl::default(), None);
        assert!(r.success);
        assert_eq!((r.falls, r.recoveries), (1, 1));
    }

    #[test]
    fn perfect_tracking_has_zero_error() {
        let log: Vec<LogSample> = (0..100)
            .map(|k| {
                let mut s = sample(k as f64 * 0.02, 0.1);
                s.command = [1.0, -0.5];
                s.ball_vel = [1.0, -0.5];
                s
            })
            .collect();
        let m = compute_tracking_metrics(&log);
        assert!(m.heading_error.iter().all(|e| *e == 0.0));
        assert_eq!(m.mean_speed_error, 0.0);
        assert!(m.ball_speed.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn spinning_command_headings_stay_wrapped() {
        let log: Vec<LogSample> = (0..2000)
            .map(|k| {
                let a = 0.05 * k as f64;
                let mut s = sample(k as f64 * 0.02, 0.1);
                s.command = [a.cos(), a.sin()];
                s.ball_vel = [a.cos(), a.sin()];
                s
            })
            .collect();
        let m = compute_tracking_metrics(&log);
        assert!(m.command_heading.iter().all(|h| *h > -PI && *h <= PI));
        // Oracle: the unwrapped series is the original linear ramp.
        let un = unwrap_headings(&m.command_heading);
        for (k, u) in un.iter().enumerate() {
            assert!((u - 0.05 * k as f64).abs() < 1e-9);
        }
        assert!(m.heading_error.iter().all(|e| e.abs() < 1e-12));
    }

    #[test]
    fn report_aggregation_matches_trials() {
        let p = TerrainPreset::by_name("tile").unwrap();
        let mk = |i, ok| TrialResult {
            trial: i,
            success: ok,
            failure: (!ok).then_some(Failure { cause: FailureCause::LossOfControl, time: 1.0 }),
            falls: 0,
            recoveries: 0,
            mean_velocity_error: 0.0,
            distance_traveled: 0.0,
        };
        let r = EvalReport::from_trials(&p, "null", 0, vec![], vec![mk(0, true), mk(1, false), mk(2, true)]);
        assert_eq!(r.score, "2/3");
        assert!(r.is_consistent());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"loss of control\""));
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert!(EvalReport::table(&[r]).contains("| tile | null | 2/3 |"));
    }

    fn short_settings() -> EvalSettings {
        let mut s = EvalSettings::default();
        s.trials = 2;
        s.seed = 3;
        s.script = ScriptedTrajectory {
            phases: vec![
                ScriptPhase { command: [1.5, 0.0], duration: 8.0 },
                ScriptPhase { command: [0.0, 0.0], duration: 1.0 },
            ],
        };
        s
    }

    #[test]
    fn oracle_succeeds_and_null_loses_control() {
        let cfg = TrainConfig::default();
        let p = TerrainPreset::by_name("grass").unwrap();
        let s = short_settings();
        let (oracle, ologs) = run_scripted_eval::<f32>(&EvalAgent::Oracle, &p, &cfg, &s).unwrap();
        assert_eq!(oracle.score, "2/2", "{oracle:?}");
        let (null, nlogs) = run_scripted_eval::<f32>(&EvalAgent::Null, &p, &cfg, &s).unwrap();
        assert_eq!(null.score, "0/2");
        assert!(null.trials.iter().all(|t| t.failure.unwrap().cause == FailureCause::LossOfControl));
        // The harness issues the same commands whoever drives.
        for (a, b) in ologs.iter().zip(&nlogs) {
            let ca: Vec<_> = a.samples.iter().map(|s| s.command).collect();
            let cb: Vec<_> = b.samples.iter().map(|s| s.command).collect();
            assert_eq!(ca, cb);
        }
    }

    #[test]
    fn fixed_seed_repeats() {
        let cfg = TrainConfig::default();
        let p = TerrainPreset::by_name("sand").unwrap();
        let s = short_settings();
        let a = run_scripted_eval::<f32>(&EvalAgent::Null, &p, &cfg, &s).unwrap();
        let b = run_scripted_eval::<f32>(&EvalAgent::Null, &p, &cfg, &s).unwrap();
        assert_eq!(a, b);
    }
}
