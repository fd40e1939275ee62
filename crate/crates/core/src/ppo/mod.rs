//! Proximal policy optimization with a jointly trained state estimator.
//!
//! Rollouts are collected synchronously from a [`VecEnv`](crate::env::VecEnv).
//! Every reduction (gradient sums, statistics) runs over fixed-size chunks
//! combined in a fixed order, so results do not depend on the worker count.

mod gae;
mod model;
mod normalizer;
mod trainer;
mod update;

pub use gae::{compute_gae, compute_gae_bruteforce, normalize_advantages};
pub use model::{ActorCritic, Grads};
pub use normalizer::{RewardNormalizer, RunningMeanStd};
pub use trainer::{
    collect_rollout, policy_statistics, train, PolicyStats, RolloutBuffer, TrainSummary, Trainer, TrainerState,
    METRICS_FILE, POLICY_FILE, STATE_FILE,
};
pub use update::{minibatch_gradient, ppo_update, surrogate, LossStats, Minibatch};

use serde::{Deserialize, Serialize};

use crate::config::positive;
use crate::nn::AdamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub steps_per_rollout: usize,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub estimator_coef: f64,
    pub clip: f64,
    pub normalize_rewards: bool,
    pub normalize_advantages: bool,
    pub adam: AdamConfig,
    /// Global gradient-norm limit; zero disables clipping.
    pub max_grad_norm: f64,
    pub total_timesteps: u64,
    /// Feed stored estimator outputs to the policy without letting policy
    /// gradients reach the estimator.
    pub block_estimator_grad: bool,
    /// Rows per gradient chunk. Part of the numerical definition of an
    /// update: changing it changes summation order.
    pub chunk_rows: usize,
    /// Worker threads; zero uses every available core.
    pub workers: usize,
    /// Updates between checkpoints.
    pub checkpoint_every: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 4096,
            gamma: 0.99,
            lambda: 0.95,
            steps_per_rollout: 21,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.01,
            value_coef: 1.0,
            estimator_coef: 1.0,
            clip: 0.2,
            normalize_rewards: true,
            normalize_advantages: true,
            adam: AdamConfig::default(),
            max_grad_norm: 1.0,
            total_timesteps: 7_000_000_000,
            block_estimator_grad: true,
            chunk_rows: 128,
            workers: 0,
            checkpoint_every: 50,
        }
    }
}

impl PpoConfig {
    pub fn samples_per_rollout(&self) -> usize {
        self.n_envs * self.steps_per_rollout
    }

    pub fn minibatch_size(&self) -> usize {
        self.samples_per_rollout() / self.minibatches.max(1)
    }

    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        for (name, v) in [
            ("n_envs", self.n_envs),
            ("steps_per_rollout", self.steps_per_rollout),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("chunk_rows", self.chunk_rows),
        ] {
            if v == 0 {
                errs.push(format!("{path}.{name}: must be at least 1"));
            }
        }
        if self.minibatches > 0 && self.samples_per_rollout() % self.minibatches != 0 {
            errs.push(format!(
                "{path}.minibatches: {} does not divide n_envs x steps_per_rollout = {}",
                self.minibatches,
                self.samples_per_rollout()
            ));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            errs.push(format!("{path}.clip: must lie in (0, 1) (got {})", self.clip));
        }
        for (name, v) in [("gamma", self.gamma), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{path}.{name}: must lie in [0, 1] (got {v})"));
            }
        }
        for (name, v) in [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("estimator_coef", self.estimator_coef),
            ("max_grad_norm", self.max_grad_norm),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                errs.push(format!("{path}.{name}: must be non-negative and finite (got {v})"));
            }
        }
        positive(errs, &format!("{path}.adam"), "lr", self.adam.lr);
        if self.checkpoint_every == 0 {
            errs.push(format!("{path}.checkpoint_every: must be at least 1"));
        }
    }
}
