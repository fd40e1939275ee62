//! Training environments: one simulated world plus its sensing and
//! actuation pipeline, and a vectorized wrapper that steps many in lockstep.
//!
//! During training the world frame doubles as the global command frame, so
//! commands and the yaw observation are taken relative to world axes.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{TaskMode, TrainConfig, NUM_JOINTS};
use crate::error::{SimError, TrainError};
use crate::gait::{advance_gait_phase, desired_contact};
use crate::randomization::{
    interval_fires, maybe_teleport_ball, perturb_ball_velocity, perturb_gravity, sample_episode_dynamics,
    EpisodeDynamics,
};
use crate::reward::{dribble_reward, recovery_reward, DribbleInputs, RecoveryInputs, RewardBreakdown};
use crate::rng::{self, env_stream, SimRng, StreamKind};
use crate::runtime::{
    action_to_targets, build_observation, build_recovery_observation, ActionDelay, CameraHold, ObservationHistory,
    COMMAND_LIMIT, ESTIMATOR_WIDTH, OBS_WIDTH, RECOVERY_OBS_WIDTH,
};
use crate::world::{reset_world, step_world, Action, FallBank, WorldState};

/// Ground truth the estimator learns: body velocity (3), planar ball
/// velocity in the world frame (2) and the ball drag coefficient.
pub type EstimatorTargets = [f64; ESTIMATOR_WIDTH];

pub fn estimator_targets(world: &WorldState) -> EstimatorTargets {
    let v = world.robot.body_lin_vel();
    let b = &world.ball;
    [v.x, v.y, v.z, b.velocity.x, b.velocity.y, b.drag_coeff]
}

/// Per-step observation width for a task.
pub fn step_width(mode: TaskMode) -> usize {
    match mode {
        TaskMode::Dribble => OBS_WIDTH,
        TaskMode::Recovery => RECOVERY_OBS_WIDTH,
    }
}

/// Estimator output width for a task (recovery has no estimator).
pub fn estimator_width(mode: TaskMode) -> usize {
    match mode {
        TaskMode::Dribble => ESTIMATOR_WIDTH,
        TaskMode::Recovery => 0,
    }
}

/// Result of one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    /// Unweighted ball-velocity tracking term (dribble only).
    pub tracking: f64,
    pub breakdown: RewardBreakdown,
    /// The episode ended on this step (failure or time limit).
    pub done: bool,
    /// The episode hit the time limit; `terminal` then holds the final
    /// observation and targets for bootstrapping.
    pub timeout: bool,
    pub terminal: Option<(Vec<f64>, EstimatorTargets)>,
    /// Undiscounted return of the episode that just ended.
    pub episode_return: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEnv {
    pub index: usize,
    pub mode: TaskMode,
    pub world: WorldState,
    pub dynamics: EpisodeDynamics,
    pub history: ObservationHistory,
    /// `[a_t, a_{t-1}, a_{t-2}]`, raw policy outputs.
    pub actions: [[f64; NUM_JOINTS]; 3],
    pub delay: ActionDelay,
    pub camera: CameraHold,
    /// Command in the world frame.
    pub command: Vector2<f64>,
    pub episode_steps: u64,
    pub episode_return: f64,
    world_rng: SimRng,
    noise_rng: SimRng,
    sensor_rng: SimRng,
    pub policy_rng: SimRng,
}

impl TrainEnv {
    pub fn new(index: usize, mode: TaskMode, cfg: &TrainConfig, bank: Option<&FallBank>) -> Result<Self, SimError> {
        let i = index as u64;
        let stand = Action::stand(&cfg.sim.robot);
        let dynamics = EpisodeDynamics::nominal(mode);
        let mut world_rng = env_stream(cfg.seed, i, StreamKind::World);
        let world = reset_world(&mut world_rng, mode, &cfg.env, &dynamics, &cfg.sim, bank)?;
        let mut env = Self {
            index,
            mode,
            camera: CameraHold::new(world.ball_in_body(), 0.0),
            world,
            dynamics,
            history: ObservationHistory::new(step_width(mode), cfg.env.history_len),
            actions: [[0.0; NUM_JOINTS]; 3],
            delay: ActionDelay::new(0, stand),
            command: Vector2::zeros(),
            episode_steps: 0,
            episode_return: 0.0,
            world_rng,
            noise_rng: env_stream(cfg.seed, i, StreamKind::Noise),
            sensor_rng: env_stream(cfg.seed, i, StreamKind::Sensor),
            policy_rng: env_stream(cfg.seed, i, StreamKind::Policy),
        };
        env.reset(cfg, bank)?;
        Ok(env)
    }

    pub fn horizon(cfg: &TrainConfig) -> u64 {
        (cfg.env.episode_length_s / cfg.sim.control_dt()).round() as u64
    }

    /// Starts a new episode with freshly sampled dynamics.
    pub fn reset(&mut self, cfg: &TrainConfig, bank: Option<&FallBank>) -> Result<(), SimError> {
        self.dynamics = sample_episode_dynamics(&mut self.world_rng, &cfg.randomization, &cfg.noise, self.mode);
        self.world = reset_world(&mut self.world_rng, self.mode, &cfg.env, &self.dynamics, &cfg.sim, bank)?;
        self.history.clear();
        self.actions = [[0.0; NUM_JOINTS]; 3];
        self.delay.reset(self.dynamics.action_delay_substeps, Action::stand(&cfg.sim.robot));
        self.camera = CameraHold::new(self.world.ball_in_body(), 0.0);
        self.camera.update(
            0.0,
            &self.world.ball_in_body(),
            &self.dynamics,
            cfg.noise.camera_delay,
            &mut self.sensor_rng,
        );
        self.command = self.sample_command();
        self.episode_steps = 0;
        self.episode_return = 0.0;
        self.push_observation(cfg);
        Ok(())
    }

    fn sample_command(&mut self) -> Vector2<f64> {
        Vector2::new(
            rng::uniform(&mut self.world_rng, -COMMAND_LIMIT, COMMAND_LIMIT),
            rng::uniform(&mut self.world_rng, -COMMAND_LIMIT, COMMAND_LIMIT),
        )
    }

    fn push_observation(&mut self, cfg: &TrainConfig) {
        let row: Vec<f64> = match self.mode {
            TaskMode::Dribble => {
                let timing = advance_gait_phase(self.world.time, &cfg.env.gait).theta;
                build_observation(&self.world, self.command, &self.camera.estimate, &timing, 0.0).to_vec()
            }
            TaskMode::Recovery => build_recovery_observation(&self.world, &self.actions[0]).to_vec(),
        };
        self.history.push(&row).expect("row width matches history");
    }

    pub fn observation(&self) -> &[f64] {
        self.history.flat()
    }

    pub fn targets(&self) -> EstimatorTargets {
        estimator_targets(&self.world)
    }

    fn reward(&self, cfg: &TrainConfig) -> RewardBreakdown {
        let c = &cfg.sim.robot;
        match self.mode {
            TaskMode::Dribble => {
                let phases = advance_gait_phase(self.world.time, &cfg.env.gait).phases;
                let kappa = desired_contact(&phases, &cfg.env.gait);
                let a = &self.actions;
                let inp = DribbleInputs::from_world(&self.world, self.command, 0.0, kappa, [&a[0], &a[1], &a[2]], c);
                dribble_reward(&inp, &cfg.reward)
            }
            TaskMode::Recovery => {
                recovery_reward(&RecoveryInputs::from_world(&self.world, &self.actions[0], c, &cfg.reward), &cfg.reward)
            }
        }
    }

    /// Applies one raw policy action for a 20 ms control step. Episodes
    /// that end are reset before returning.
    pub fn step(
        &mut self,
        action: &[f64; NUM_JOINTS],
        cfg: &TrainConfig,
        bank: Option<&FallBank>,
    ) -> Result<StepOutcome, SimError> {
        let sim = &cfg.sim;
        self.actions = [*action, self.actions[0], self.actions[1]];
        let target = action_to_targets(action, &sim.robot, cfg.env.action_scale, cfg.env.action_clip);
        let targets = self.delay.schedule(target, self.world.substep, sim.substeps_per_control);
        step_world(&mut self.world, &targets, &self.dynamics, sim)?;
        let t = self.world.time;
        let noise = &cfg.noise;

        if self.mode == TaskMode::Dribble {
            if noise.teleport {
                let r = self.dynamics.teleport_radius;
                maybe_teleport_ball(t, &mut self.world.ball, &mut self.noise_rng, noise.teleport_interval_s, r);
            }
            if noise.perturb && interval_fires(t, noise.perturb_interval_s) {
                perturb_ball_velocity(
                    &mut self.world.ball,
                    &mut self.noise_rng,
                    self.dynamics.perturbation_velocity_max,
                );
            }
        }
        if let Some(g) = perturb_gravity(t, &mut self.noise_rng, &self.dynamics, noise.gravity_interval_s, sim.gravity)
        {
            self.world.gravity = g;
        }
        if interval_fires(t, cfg.env.command_resample_s) {
            self.command = self.sample_command();
        }

        let breakdown = self.reward(cfg);
        let tracking = breakdown.term("ball_velocity").map_or(0.0, |term| term.value);
        self.episode_steps += 1;
        self.episode_return += breakdown.total;
        let (roll, pitch) = self.world.robot.roll_pitch();
        let failed = self.mode == TaskMode::Dribble && roll.abs().max(pitch.abs()) > cfg.env.fall_termination_angle;
        let timeout = !failed && self.episode_steps >= Self::horizon(cfg);

        let ball = self.world.ball_in_body();
        self.camera.update(t, &ball, &self.dynamics, noise.camera_delay, &mut self.sensor_rng);
        self.push_observation(cfg);

        let terminal = timeout.then(|| (self.observation().to_vec(), self.targets()));
        let episode_return = (failed || timeout).then_some(self.episode_return);
        if failed || timeout {
            self.reset(cfg, bank)?;
        }
        Ok(StepOutcome {
            reward: breakdown.total,
            tracking,
            breakdown,
            done: failed || timeout,
            timeout,
            terminal,
            episode_return,
        })
    }
}

/// Environments stepped together. Each environment owns its random streams,
/// so results do not depend on how the work is split across threads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VecEnv {
    pub mode: TaskMode,
    pub envs: Vec<TrainEnv>,
}

impl VecEnv {
    pub fn new(mode: TaskMode, n: usize, cfg: &TrainConfig, bank: Option<&FallBank>) -> Result<Self, TrainError> {
        let envs = (0..n)
            .into_par_iter()
            .map(|i| TrainEnv::new(i, mode, cfg, bank).map_err(|source| TrainError::Env { env: i, step: 0, source }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { mode, envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn obs_width(&self, cfg: &TrainConfig) -> usize {
        step_width(self.mode) * cfg.env.history_len
    }

    /// Steps every environment with its row of `actions` (`n x 12`).
    pub fn step(
        &mut self,
        actions: &[f64],
        cfg: &TrainConfig,
        bank: Option<&FallBank>,
        step: usize,
    ) -> Result<Vec<StepOutcome>, TrainError> {
        assert_eq!(actions.len(), self.envs.len() * NUM_JOINTS);
        self.envs
            .par_iter_mut()
            .zip(actions.par_chunks(NUM_JOINTS))
            .map(|(env, a)| {
                let a: &[f64; NUM_JOINTS] = a.try_into().unwrap();
                env.step(a, cfg, bank).map_err(|source| TrainError::Env { env: env.index, step, source })
            })
            .collect()
    }

    /// Row-major `n x obs_width` observation matrix.
    pub fn observations(&self) -> Vec<f64> {
        self.envs.iter().flat_map(|e| e.observation().iter().copied()).collect()
    }

    pub fn targets(&self) -> Vec<f64> {
        self.envs.iter().flat_map(|e| e.targets()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomization::NoiseConfig;

    fn quiet_cfg() -> TrainConfig {
        TrainConfig { noise: NoiseConfig::disabled(), ..TrainConfig::default() }
    }

    #[test]
    fn reset_pads_history_with_zeros() {
        let cfg = quiet_cfg();
        let env = TrainEnv::new(0, TaskMode::Dribble, &cfg, None).unwrap();
        let h = &env.history;
        for k in 0..h.depth - 1 {
            assert!(h.row(k).iter().all(|v| *v == 0.0));
        }
        assert!(h.row(h.depth - 1).iter().any(|v| *v != 0.0));
        assert_eq!(env.observation().len(), 37 * 15);
    }

    #[test]
    fn observation_excludes_estimator_targets() {
        // The body velocity and drag coefficient never appear in a row.
        let cfg = quiet_cfg();
        let mut env = TrainEnv::new(1, TaskMode::Dribble, &cfg, None).unwrap();
        env.world.ball.drag_coeff = 0.123456789;
        env.push_observation(&cfg);
        assert!(!env.observation().contains(&0.123456789));
    }

    #[test]
    fn done_flags_fall_on_horizon_multiples() {
        let mut cfg = quiet_cfg();
        cfg.env.episode_length_s = 0.2;
        cfg.env.fall_termination_angle = 10.0;
        let mut env = TrainEnv::new(2, TaskMode::Dribble, &cfg, None).unwrap();
        let h = TrainEnv::horizon(&cfg);
        assert_eq!(h, 10);
        for k in 1..=35u64 {
            let out = env.step(&[0.0; NUM_JOINTS], &cfg, None).unwrap();
            assert_eq!(out.done, k % h == 0, "step {k}");
            assert_eq!(out.timeout, out.done);
            assert_eq!(out.terminal.is_some(), out.done);
        }
    }

    #[test]
    fn stepping_is_independent_of_thread_count() {
        let cfg = TrainConfig::default();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut v = VecEnv::new(TaskMode::Dribble, 6, &cfg, None).unwrap();
                let mut rng = crate::rng::stream(5, 0);
                for s in 0..20 {
                    let a: Vec<f64> = (0..6 * NUM_JOINTS).map(|_| crate::rng::normal(&mut rng)).collect();
                    v.step(&a, &cfg, None, s).unwrap();
                }
                v
            })
        };
        assert_eq!(run(1), run(4));
    }
}
