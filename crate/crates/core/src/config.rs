//! Simulation, robot and training configuration.
//!
//! All physical constants live here and are loaded from JSON. Every struct
//! implements `Default` with the values used throughout the test-suite, and
//! `validate` reports problems with dotted field paths.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;
use crate::gait::GaitSchedule;
use crate::nn::NetConfig;
use crate::ppo::PpoConfig;
use crate::randomization::{NoiseConfig, RandomizationRanges};
use crate::reward::RewardConfig;

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FR", "FL", "RR", "RL"];

/// Geometry and actuation of the quadruped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConstants {
    /// Nominal base mass (kg), payload is added per episode.
    pub base_mass: f64,
    /// Diagonal body-frame inertia about the COM (kg m^2).
    pub base_inertia: [f64; 3],
    /// Half extents of the base collision box (m).
    pub base_half_extents: [f64; 3],
    /// Hip joint origins in the body frame, leg order FR, FL, RR, RL.
    pub hip_offsets: [[f64; 3]; NUM_LEGS],
    pub hip_link: f64,
    pub thigh_link: f64,
    pub calf_link: f64,
    pub foot_radius: f64,
    pub stand_pose: [f64; NUM_JOINTS],
    pub joint_lower: [f64; NUM_JOINTS],
    pub joint_upper: [f64; NUM_JOINTS],
    pub torque_limit: f64,
    /// Reflected rotor inertia per joint type (hip, thigh, calf).
    pub reflected_inertia: [f64; 3],
    pub kp: f64,
    pub kd: f64,
}

impl Default for RobotConstants {
    fn default() -> Self {
        let leg_pose = [0.0, 0.75, -1.5];
        let lower = [-0.863, -0.686, -2.818];
        let upper = [0.863, 4.501, -0.888];
        let tile = |p: [f64; 3]| {
            let mut out = [0.0; NUM_JOINTS];
            for (i, v) in out.iter_mut().enumerate() {
                *v = p[i % 3];
            }
            out
        };
        Self {
            base_mass: 12.0,
            base_inertia: [0.10, 0.25, 0.28],
            base_half_extents: [0.19, 0.095, 0.06],
            hip_offsets: [
                [0.1881, -0.04675, 0.0],
                [0.1881, 0.04675, 0.0],
                [-0.1881, -0.04675, 0.0],
                [-0.1881, 0.04675, 0.0],
            ],
            hip_link: 0.08,
            thigh_link: 0.213,
            calf_link: 0.213,
            foot_radius: 0.02,
            stand_pose: tile(leg_pose),
            joint_lower: tile(lower),
            joint_upper: tile(upper),
            torque_limit: 23.7,
            reflected_inertia: [0.01, 0.01, 0.015],
            kp: 20.0,
            kd: 0.5,
        }
    }
}

impl RobotConstants {
    /// Lateral sign of a leg's hip link: right legs -1, left legs +1.
    pub fn side(leg: usize) -> f64 {
        if leg % 2 == 0 {
            -1.0
        } else {
            1.0
        }
    }

    /// Foot height below the hip in the nominal stand pose.
    pub fn stand_leg_height(&self) -> f64 {
        let t = self.stand_pose[1];
        let c = self.stand_pose[2];
        self.thigh_link * t.cos() + self.calf_link * (t + c).cos()
    }

    /// Nominal base height above flat ground with feet touching.
    pub fn nominal_height(&self) -> f64 {
        self.stand_leg_height() + self.foot_radius
    }

    fn validate(&self, path: &str, errs: &mut Vec<String>) {
        positive(errs, path, "base_mass", self.base_mass);
        for (i, v) in self.base_inertia.iter().enumerate() {
            positive(errs, path, &format!("base_inertia[{i}]"), *v);
        }
        for (i, v) in self.reflected_inertia.iter().enumerate() {
            positive(errs, path, &format!("reflected_inertia[{i}]"), *v);
        }
        positive(errs, path, "torque_limit", self.torque_limit);
        positive(errs, path, "thigh_link", self.thigh_link);
        positive(errs, path, "calf_link", self.calf_link);
        for j in 0..NUM_JOINTS {
            if self.joint_lower[j] >= self.joint_upper[j] {
                errs.push(format!("{path}.joint_lower[{j}]: must be below joint_upper[{j}]"));
            }
            if self.stand_pose[j] < self.joint_lower[j] || self.stand_pose[j] > self.joint_upper[j] {
                errs.push(format!("{path}.stand_pose[{j}]: outside joint limits"));
            }
        }
    }
}

/// Penalty contact and integrator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub physics_dt: f64,
    pub substeps_per_control: usize,
    pub gravity: f64,
    /// Normal stiffness per robot contact point (N/m).
    pub ground_stiffness: f64,
    /// Effective mass used to turn a damping ratio into N s/m per point.
    pub contact_effective_mass: f64,
    /// Lower bound on the contact damping ratio (restitution 1 maps here).
    pub min_damping_ratio: f64,
    /// Tangential stick-spring stiffness (N/m) and damping (N s/m).
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    /// Defaults used when no episode dynamics override them.
    pub friction: f64,
    pub restitution: f64,
    pub ball_radius: f64,
    pub ball_stiffness: f64,
    pub ball_damping_ratio: f64,
    pub ball_friction: f64,
    pub robot: RobotConstants,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            physics_dt: 0.005,
            substeps_per_control: 4,
            gravity: 9.81,
            ground_stiffness: 2.0e4,
            contact_effective_mass: 3.0,
            min_damping_ratio: 0.2,
            tangential_stiffness: 4.0e3,
            tangential_damping: 60.0,
            friction: 0.7,
            restitution: 0.5,
            ball_radius: 0.09,
            ball_stiffness: 5.0e3,
            ball_damping_ratio: 0.5,
            ball_friction: 0.5,
            robot: RobotConstants::default(),
        }
    }
}

impl SimParams {
    pub fn control_dt(&self) -> f64 {
        self.physics_dt * self.substeps_per_control as f64
    }

    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        positive(errs, path, "physics_dt", self.physics_dt);
        if self.substeps_per_control == 0 {
            errs.push(format!("{path}.substeps_per_control: must be at least 1"));
        }
        if (self.control_dt() - 0.02).abs() > 1e-12 {
            errs.push(format!(
                "{path}.substeps_per_control: substeps x physics_dt must equal 0.02 s (got {})",
                self.control_dt()
            ));
        }
        positive(errs, path, "ground_stiffness", self.ground_stiffness);
        positive(errs, path, "ball_stiffness", self.ball_stiffness);
        positive(errs, path, "ball_radius", self.ball_radius);
        self.robot.validate(&format!("{path}.robot"), errs);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        self.validate_into("sim", &mut errs);
        ConfigError::from_list(errs)
    }
}

/// Which policy an environment trains or a runtime executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMode {
    Dribble,
    Recovery,
}

/// Per-environment episode settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: TaskMode,
    pub episode_length_s: f64,
    pub command_resample_s: f64,
    /// Dribble episodes terminate once roll or pitch exceeds this (rad).
    pub fall_termination_angle: f64,
    pub history_len: usize,
    /// Joint targets are `stand_pose + action_scale * clip(a)`.
    pub action_scale: f64,
    pub action_clip: f64,
    pub reset_ball_radius: f64,
    pub reset_joint_noise: f64,
    pub gait: GaitSchedule,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: TaskMode::Dribble,
            episode_length_s: 40.0,
            command_resample_s: 10.0,
            fall_termination_angle: 1.0,
            history_len: 15,
            action_scale: 0.25,
            action_clip: 4.0,
            reset_ball_radius: 2.0,
            reset_joint_noise: 0.1,
            gait: GaitSchedule::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        positive(errs, path, "episode_length_s", self.episode_length_s);
        positive(errs, path, "command_resample_s", self.command_resample_s);
        positive(errs, path, "action_scale", self.action_scale);
        if self.history_len == 0 {
            errs.push(format!("{path}.history_len: must be at least 1"));
        }
        self.gait.validate_into(&format!("{path}.gait"), errs);
    }
}

/// Everything `train` needs, loaded from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub sim: SimParams,
    pub env: EnvConfig,
    pub randomization: RandomizationRanges,
    pub noise: NoiseConfig,
    pub reward: RewardConfig,
    pub ppo: PpoConfig,
    pub nets: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sim: SimParams::default(),
            env: EnvConfig::default(),
            randomization: RandomizationRanges::default(),
            noise: NoiseConfig::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            nets: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        self.sim.validate_into("sim", &mut errs);
        self.env.validate_into("env", &mut errs);
        self.randomization.validate_into("randomization", &mut errs);
        self.noise.validate_into("noise", &mut errs);
        self.reward.validate_into("reward", &mut errs);
        self.ppo.validate_into("ppo", &mut errs);
        self.nets.validate_into("nets", &mut errs);
        ConfigError::from_list(errs)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub(crate) fn positive(errs: &mut Vec<String>, path: &str, field: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errs.push(format!("{path}.{field}: must be positive and finite (got {v})"));
    }
}
