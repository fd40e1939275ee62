//! Reduced-order quadruped and soccer-ball simulator with a PPO trainer,
//! control runtime, evaluation harness and teleoperation service.

pub mod config;
pub mod env;
pub mod error;
pub mod eval;
pub mod gait;
pub mod nn;
pub mod ppo;
pub mod randomization;
pub mod reward;
pub mod rng;
pub mod runtime;
pub mod teleop;
pub mod vision;
pub mod world;
