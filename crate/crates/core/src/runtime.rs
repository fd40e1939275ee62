//! Observation building, the dribble/recovery state machine, sensing and
//! actuation delays, and the 50 Hz policy runner used at deployment.

use std::collections::VecDeque;
use std::sync::Mutex;

use nalgebra::{Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RobotConstants, NUM_JOINTS};
use crate::error::RuntimeError;
use crate::gait::{advance_gait_phase, GaitSchedule};
use crate::nn::{DenseNet, GaussianHead, Scalar};
use crate::randomization::{corrupt_ball_observation, sample_camera_delay, EpisodeDynamics};
use crate::reward::wrap_angle;
use crate::rng::SimRng;
use crate::world::{Action, WorldState};

/// Per-step dribbling observation width: command 2, ball 3, q 12, qd 12,
/// gravity 3, yaw 1, timing 4.
pub const OBS_WIDTH: usize = 37;
/// Per-step recovery observation width: q 12, qd 12, gravity 3, previous
/// action 12.
pub const RECOVERY_OBS_WIDTH: usize = 39;
pub const HISTORY_DEPTH: usize = 15;
/// Estimator outputs: body velocity 3, ball velocity 2, drag coefficient 1.
pub const ESTIMATOR_WIDTH: usize = 6;
pub const COMMAND_LIMIT: f64 = 1.5;

/// Fixed-depth shift register of observation rows, oldest first. Rows not
/// yet written are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationHistory {
    pub width: usize,
    pub depth: usize,
    data: Vec<f64>,
}

impl ObservationHistory {
    pub fn new(width: usize, depth: usize) -> Self {
        Self { width, depth, data: vec![0.0; width * depth] }
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Drops the oldest row and appends `row` as the newest.
    pub fn push(&mut self, row: &[f64]) -> Result<(), RuntimeError> {
        if row.len() != self.width {
            return Err(RuntimeError::WidthMismatch { expected: self.width, got: row.len() });
        }
        self.data.copy_within(self.width.., 0);
        let start = self.data.len() - self.width;
        self.data[start..].copy_from_slice(row);
        Ok(())
    }

    /// Row `k`, where `depth - 1` is the newest.
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.width..(k + 1) * self.width]
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }
}

fn rotate2(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Clamps an operator command (in the global frame, i.e. the robot's body
/// frame at session start) to the command range and returns it in world
/// coordinates.
pub fn global_frame_command(raw: Vector2<f64>, initial_yaw: f64) -> Vector2<f64> {
    let clamped = Vector2::new(raw.x.clamp(-COMMAND_LIMIT, COMMAND_LIMIT), raw.y.clamp(-COMMAND_LIMIT, COMMAND_LIMIT));
    rotate2(clamped, initial_yaw)
}

/// A world-frame vector expressed in the current body heading.
pub fn command_in_body(world_cmd: Vector2<f64>, robot_yaw: f64) -> Vector2<f64> {
    rotate2(world_cmd, -robot_yaw)
}

/// One dribbling observation row.
///
/// `command` is in the global frame, `ball_estimate` in the body frame, and
/// `global_yaw` is the world heading of the global frame.
pub fn build_observation(
    world: &WorldState,
    command: Vector2<f64>,
    ball_estimate: &Vector3<f64>,
    timing: &[f64; 4],
    global_yaw: f64,
) -> [f64; OBS_WIDTH] {
    let r = &world.robot;
    let mut row = [0.0; OBS_WIDTH];
    row[0] = command.x;
    row[1] = command.y;
    row[2..5].copy_from_slice(ball_estimate.as_slice());
    row[5..17].copy_from_slice(&r.q);
    row[17..29].copy_from_slice(&r.qd);
    row[29..32].copy_from_slice(r.gravity_body.as_slice());
    row[32] = wrap_angle(r.yaw_global - global_yaw);
    row[33..37].copy_from_slice(timing);
    row
}

pub fn build_recovery_observation(world: &WorldState, prev_action: &[f64; NUM_JOINTS]) -> [f64; RECOVERY_OBS_WIDTH] {
    let r = &world.robot;
    let mut row = [0.0; RECOVERY_OBS_WIDTH];
    row[0..12].copy_from_slice(&r.q);
    row[12..24].copy_from_slice(&r.qd);
    row[24..27].copy_from_slice(r.gravity_body.as_slice());
    row[27..39].copy_from_slice(prev_action);
    row
}

fn tile(row: &[f64], depth: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len() * depth);
    for _ in 0..depth {
        out.extend_from_slice(row);
    }
    out
}

/// Fixed per-feature `(offset, scale)` for a stacked dribbling observation.
pub fn observation_normalization(robot: &RobotConstants, depth: usize) -> (Vec<f64>, Vec<f64>) {
    let mut offset = [0.0; OBS_WIDTH];
    let mut scale = [1.0; OBS_WIDTH];
    offset[5..17].copy_from_slice(&robot.stand_pose);
    scale[17..29].iter_mut().for_each(|s| *s = 0.05);
    scale[32] = 1.0 / std::f64::consts::PI;
    (tile(&offset, depth), tile(&scale, depth))
}

pub fn recovery_observation_normalization(robot: &RobotConstants, depth: usize) -> (Vec<f64>, Vec<f64>) {
    let mut offset = [0.0; RECOVERY_OBS_WIDTH];
    let mut scale = [1.0; RECOVERY_OBS_WIDTH];
    offset[0..12].copy_from_slice(&robot.stand_pose);
    scale[12..24].iter_mut().for_each(|s| *s = 0.05);
    (tile(&offset, depth), tile(&scale, depth))
}

/// Raw policy output to joint targets: `stand + scale * clip(a)`.
pub fn action_to_targets(a: &[f64; NUM_JOINTS], robot: &RobotConstants, scale: f64, clip: f64) -> Action {
    let mut q = robot.stand_pose;
    for j in 0..NUM_JOINTS {
        q[j] += scale * a[j].clamp(-clip, clip);
    }
    Action::new(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FsmMode {
    Dribble,
    Recovery,
}

impl FsmMode {
    pub fn name(self) -> &'static str {
        match self {
            FsmMode::Dribble => "dribble",
            FsmMode::Recovery => "recovery",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FsmState {
    pub mode: FsmMode,
    pub entry_time: f64,
}

pub const FALL_ANGLE: f64 = 1.0;
pub const UPRIGHT_ANGLE: f64 = 0.5;

impl FsmState {
    pub fn new(t: f64) -> Self {
        Self { mode: FsmMode::Dribble, entry_time: t }
    }
}

/// Switches to recovery once roll or pitch exceeds 1.0 rad and back to
/// dribbling once both are below 0.5 rad.
pub fn fsm_transition(fsm: FsmState, roll: f64, pitch: f64, t: f64) -> FsmState {
    let tilt = roll.abs().max(pitch.abs());
    match fsm.mode {
        FsmMode::Dribble if tilt > FALL_ANGLE => FsmState { mode: FsmMode::Recovery, entry_time: t },
        FsmMode::Recovery if tilt < UPRIGHT_ANGLE => FsmState { mode: FsmMode::Dribble, entry_time: t },
        _ => fsm,
    }
}

/// FIFO of joint targets delayed by a whole number of physics substeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDelay {
    pub delay_substeps: u32,
    current: Action,
    pending: VecDeque<(u64, Action)>,
}

impl ActionDelay {
    pub fn new(delay_substeps: u32, initial: Action) -> Self {
        Self { delay_substeps, current: initial, pending: VecDeque::new() }
    }

    pub fn reset(&mut self, delay_substeps: u32, initial: Action) {
        *self = Self::new(delay_substeps, initial);
    }

    /// Queues `action`, issued at substep `now`, and returns the targets in
    /// effect for each of the next `substeps` physics substeps.
    pub fn schedule(&mut self, action: Action, now: u64, substeps: usize) -> Vec<Action> {
        self.pending.push_back((now + self.delay_substeps as u64, action));
        (0..substeps as u64)
            .map(|k| {
                while let Some(&(due, a)) = self.pending.front() {
                    if due > now + k {
                        break;
                    }
                    self.current = a;
                    self.pending.pop_front();
                }
                self.current
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Zero-order hold of the ball observation with Poisson frame arrivals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraHold {
    pub estimate: Vector3<f64>,
    pub last_update: f64,
    pub next_arrival: f64,
}

impl CameraHold {
    pub fn new(initial: Vector3<f64>, t: f64) -> Self {
        Self { estimate: initial, last_update: t, next_arrival: t }
    }

    /// Consumes every frame that arrived by `t`, updating the estimate from
    /// `truth` (body frame) with vision noise. A frame is delivered with
    /// the episode's arrival probability. Returns whether a frame landed.
    pub fn update(
        &mut self,
        t: f64,
        truth: &Vector3<f64>,
        dynamics: &EpisodeDynamics,
        enabled: bool,
        rng: &mut SimRng,
    ) -> bool {
        if !enabled {
            self.estimate = corrupt_ball_observation(*truth, dynamics.vision_noise_half_width, rng);
            self.last_update = t;
            return true;
        }
        let mut landed = false;
        while self.next_arrival <= t {
            let delivered =
                dynamics.frame_arrival_probability >= 1.0 || rng.random::<f64>() < dynamics.frame_arrival_probability;
            if delivered {
                landed = true;
            }
            self.next_arrival += sample_camera_delay(rng, dynamics.camera_mean_arrival);
        }
        if landed {
            self.estimate = corrupt_ball_observation(*truth, dynamics.vision_noise_half_width, rng);
            self.last_update = t;
        }
        landed
    }

    pub fn staleness(&self, t: f64) -> f64 {
        t - self.last_update
    }
}

/// Latest-wins single-slot command mailbox shared with another thread.
#[derive(Debug, Default)]
pub struct CommandMailbox {
    slot: Mutex<Option<(u64, Vector2<f64>)>>,
}

impl CommandMailbox {
    pub fn new() -> Self {
        Self::default()
    }

    /// Posts a command, replacing any unread one. `id` identifies it in the
    /// acknowledgement.
    pub fn post(&self, id: u64, cmd: Vector2<f64>) {
        *self.slot.lock().unwrap() = Some((id, cmd));
    }

    pub fn take(&self) -> Option<(u64, Vector2<f64>)> {
        self.slot.lock().unwrap().take()
    }
}

/// Policy network, Gaussian head and optional estimator for one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundle<T> {
    pub policy: DenseNet<T>,
    pub head: GaussianHead<T>,
    pub estimator: Option<DenseNet<T>>,
}

impl<T: Scalar> PolicyBundle<T> {
    /// Runs the estimator (if any) and the policy on one stacked
    /// observation. Returns the action and the estimator output.
    pub fn act(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut SimRng,
    ) -> Result<(Vec<f64>, Vec<f64>), RuntimeError> {
        let x: Vec<T> = obs.iter().map(|v| T::from_f64(*v)).collect();
        let mut input = x.clone();
        let est = match &self.estimator {
            Some(e) => {
                let p = e.forward(&x, 1)?;
                input.extend_from_slice(&p);
                p.iter().map(|v| v.as_f64()).collect()
            }
            None => Vec::new(),
        };
        let mean = self.policy.forward(&input, 1)?;
        let action = if deterministic { mean } else { self.head.sample(&mean, rng).0 };
        Ok((action.iter().map(|v| v.as_f64()).collect(), est))
    }
}

/// Deployment-time controller: FSM, observation histories and delays around
/// the dribbling and recovery policies.
#[derive(Debug, Clone)]
pub struct ControlRuntime<T> {
    pub fsm: FsmState,
    pub dribble: Option<PolicyBundle<T>>,
    pub recovery: Option<PolicyBundle<T>>,
    pub dribble_history: ObservationHistory,
    pub recovery_history: ObservationHistory,
    pub prev_action: [f64; NUM_JOINTS],
    pub action_delay: ActionDelay,
    pub camera: CameraHold,
    pub global_yaw: f64,
    pub gait: GaitSchedule,
    pub deterministic: bool,
    pub action_scale: f64,
    pub action_clip: f64,
    pub last_estimate: Vec<f64>,
}

impl<T: Scalar> ControlRuntime<T> {
    /// Latches the global frame to the robot's current heading.
    pub fn new(
        world: &WorldState,
        robot: &RobotConstants,
        dribble: Option<PolicyBundle<T>>,
        recovery: Option<PolicyBundle<T>>,
        delay_substeps: u32,
    ) -> Self {
        // History depth follows the loaded networks' input widths.
        let depth = |b: &Option<PolicyBundle<T>>, row: usize| {
            b.as_ref().map_or(HISTORY_DEPTH, |b| {
                let est = b.estimator.as_ref().map_or(0, |e| e.output_width());
                ((b.policy.input_width() - est) / row).max(1)
            })
        };
        Self {
            fsm: FsmState::new(world.time),
            dribble_history: ObservationHistory::new(OBS_WIDTH, depth(&dribble, OBS_WIDTH)),
            recovery_history: ObservationHistory::new(RECOVERY_OBS_WIDTH, depth(&recovery, RECOVERY_OBS_WIDTH)),
            dribble,
            recovery,
            prev_action: [0.0; NUM_JOINTS],
            action_delay: ActionDelay::new(delay_substeps, Action::stand(robot)),
            camera: CameraHold::new(world.ball_in_body(), world.time),
            global_yaw: world.robot.yaw_global,
            gait: GaitSchedule::default(),
            deterministic: true,
            action_scale: 0.25,
            action_clip: 4.0,
            last_estimate: vec![0.0; ESTIMATOR_WIDTH],
        }
    }

    /// Takes action scaling and the gait clock from an environment config.
    pub fn with_env_config(mut self, env: &crate::config::EnvConfig) -> Self {
        self.action_scale = env.action_scale;
        self.action_clip = env.action_clip;
        self.gait = env.gait.clone();
        self
    }

    /// Advances the FSM, evaluates the selected policy and returns the
    /// per-substep joint targets after the action delay. `command` is in the
    /// global frame.
    pub fn run_policy_step(
        &mut self,
        world: &WorldState,
        command: Vector2<f64>,
        robot: &RobotConstants,
        substeps: usize,
        rng: &mut SimRng,
    ) -> Result<Vec<Action>, RuntimeError> {
        let (roll, pitch) = world.robot.roll_pitch();
        let before = self.fsm.mode;
        self.fsm = fsm_transition(self.fsm, roll, pitch, world.time);
        if self.fsm.mode != before {
            self.dribble_history.clear();
            self.recovery_history.clear();
        }
        let timing = advance_gait_phase(world.time, &self.gait).theta;
        let raw = match self.fsm.mode {
            FsmMode::Dribble => {
                let bundle = self.dribble.as_ref().ok_or(RuntimeError::MissingPolicy("dribble"))?;
                let row = build_observation(world, command, &self.camera.estimate, &timing, self.global_yaw);
                self.dribble_history.push(&row)?;
                let (a, est) = bundle.act(self.dribble_history.flat(), self.deterministic, rng)?;
                self.last_estimate = est;
                a
            }
            FsmMode::Recovery => {
                let bundle = self.recovery.as_ref().ok_or(RuntimeError::MissingPolicy("recovery"))?;
                let row = build_recovery_observation(world, &self.prev_action);
                self.recovery_history.push(&row)?;
                bundle.act(self.recovery_history.flat(), self.deterministic, rng)?.0
            }
        };
        let mut a = [0.0; NUM_JOINTS];
        a.copy_from_slice(&raw);
        self.prev_action = a;
        let target = action_to_targets(&a, robot, self.action_scale, self.action_clip);
        Ok(self.action_delay.schedule(target, world.substep, substeps))
    }
}
