use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{RobotConstants, TaskMode, NUM_JOINTS};
use crate::env::{estimator_width, step_width};
use crate::error::NnError;
use crate::nn::{
    load_checkpoint, save_checkpoint, Activation, Checkpoint, DenseNet, GaussianHead, NamedTensor, NetConfig, Scalar,
};
use crate::runtime::{observation_normalization, recovery_observation_normalization, PolicyBundle};

/// Policy, critic and (for dribbling) the state estimator.
///
/// The policy sees the observation stack followed by the estimator output.
/// The critic sees the observation stack followed by the true estimator
/// targets, which never reach the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCritic<T> {
    pub mode: TaskMode,
    pub obs_width: usize,
    pub policy: DenseNet<T>,
    pub head: GaussianHead<T>,
    pub critic: DenseNet<T>,
    pub estimator: Option<DenseNet<T>>,
}

/// Gradients of every trainable tensor, accumulated in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub policy: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
    pub estimator: Vec<f64>,
}

impl Grads {
    pub fn zeros_like<T: Scalar>(m: &ActorCritic<T>) -> Self {
        Self {
            policy: vec![0.0; m.policy.num_params()],
            log_std: vec![0.0; m.head.dim()],
            critic: vec![0.0; m.critic.num_params()],
            estimator: vec![0.0; m.estimator.as_ref().map_or(0, |e| e.num_params())],
        }
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.policy, &mut self.log_std, &mut self.critic, &mut self.estimator]
    }

    pub fn add(&mut self, other: &Grads) {
        for (a, b) in self.parts_mut().into_iter().zip([&other.policy, &other.log_std, &other.critic, &other.estimator])
        {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        [&self.policy, &self.log_std, &self.critic, &self.estimator]
            .iter()
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for part in self.parts_mut() {
            part.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.policy, &self.log_std, &self.critic, &self.estimator].iter().all(|v| v.iter().all(|g| g.is_finite()))
    }
}

fn chain(hidden: &[usize], input: usize, output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

fn extend_identity(offset: &mut Vec<f64>, scale: &mut Vec<f64>, n: usize) {
    offset.extend(std::iter::repeat_n(0.0, n));
    scale.extend(std::iter::repeat_n(1.0, n));
}

impl<T: Scalar> ActorCritic<T> {
    pub fn new(
        mode: TaskMode,
        history_len: usize,
        nets: &NetConfig,
        robot: &RobotConstants,
        rng: &mut impl Rng,
    ) -> Self {
        let obs_width = step_width(mode) * history_len;
        let est = estimator_width(mode);
        let (offset, scale) = match mode {
            TaskMode::Dribble => observation_normalization(robot, history_len),
            TaskMode::Recovery => recovery_observation_normalization(robot, history_len),
        };
        let (mut aug_offset, mut aug_scale) = (offset.clone(), scale.clone());
        extend_identity(&mut aug_offset, &mut aug_scale, est);
        let act = nets.activation;
        let policy =
            DenseNet::init(&chain(&nets.policy_hidden, obs_width + est, NUM_JOINTS), act, nets.policy_output_gain, rng)
                .with_input_transform(aug_offset.clone(), aug_scale.clone());
        let critic = DenseNet::init(&chain(&nets.critic_hidden, obs_width + est, 1), act, 1.0, rng)
            .with_input_transform(aug_offset, aug_scale);
        let estimator = (est > 0).then(|| {
            DenseNet::init(&chain(&nets.estimator_hidden, obs_width, est), act, 1.0, rng)
                .with_input_transform(offset, scale)
        });
        Self { mode, obs_width, policy, head: GaussianHead::new(NUM_JOINTS, nets.init_log_std), critic, estimator }
    }

    pub fn estimator_width(&self) -> usize {
        self.estimator.as_ref().map_or(0, |e| e.output_width())
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params()
            + self.head.dim()
            + self.critic.num_params()
            + self.estimator.as_ref().map_or(0, |e| e.num_params())
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite()
            && self.critic.is_finite()
            && self.head.log_std.iter().all(|l| l.is_finite())
            && self.estimator.as_ref().is_none_or(|e| e.is_finite())
    }

    pub fn bundle(&self) -> PolicyBundle<T> {
        PolicyBundle { policy: self.policy.clone(), head: self.head.clone(), estimator: self.estimator.clone() }
    }

    fn push_net(out: &mut Vec<NamedTensor<T>>, prefix: &str, net: &DenseNet<T>) {
        for l in 0..net.num_layers() {
            let (fi, fo) = (net.sizes[l], net.sizes[l + 1]);
            let off = net.layer_offset(l);
            out.push(NamedTensor::new(
                format!("{prefix}.{l}.weight"),
                vec![fi, fo],
                net.params[off..off + fi * fo].to_vec(),
            ));
            out.push(NamedTensor::new(
                format!("{prefix}.{l}.bias"),
                vec![fo],
                net.params[off + fi * fo..off + fi * fo + fo].to_vec(),
            ));
        }
        if let Some(tr) = &net.input_transform {
            let w = net.input_width();
            out.push(NamedTensor::new(format!("{prefix}.input_offset"), vec![w], tr.offset.clone()));
            out.push(NamedTensor::new(format!("{prefix}.input_scale"), vec![w], tr.scale.clone()));
        }
    }

    fn read_net(ck: &Checkpoint<T>, prefix: &str, activation: Activation) -> Result<Option<DenseNet<T>>, NnError> {
        let mut sizes = Vec::new();
        let mut params = Vec::new();
        let mut l = 0;
        while let Ok(w) = ck.get(&format!("{prefix}.{l}.weight")) {
            let b = ck.get(&format!("{prefix}.{l}.bias"))?;
            if w.shape.len() != 2 || b.shape != [w.shape[1]] {
                return Err(NnError::Checkpoint(format!("{prefix}.{l}: inconsistent shapes")));
            }
            if let Some(&prev) = sizes.last() {
                if prev != w.shape[0] {
                    return Err(NnError::ShapeMismatch { expected: prev, got: w.shape[0] });
                }
            } else {
                sizes.push(w.shape[0]);
            }
            sizes.push(w.shape[1]);
            params.extend_from_slice(&w.data);
            params.extend_from_slice(&b.data);
            l += 1;
        }
        if l == 0 {
            return Ok(None);
        }
        let mut net = DenseNet { sizes, activation, params, input_transform: None };
        if let (Ok(o), Ok(s)) = (ck.get(&format!("{prefix}.input_offset")), ck.get(&format!("{prefix}.input_scale"))) {
            if o.data.len() != net.input_width() || s.data.len() != net.input_width() {
                return Err(NnError::ShapeMismatch { expected: net.input_width(), got: o.data.len() });
            }
            net.input_transform = Some(crate::nn::InputTransform { offset: o.data.clone(), scale: s.data.clone() });
        }
        Ok(Some(net))
    }

    pub fn to_checkpoint(&self, config_hash: &str, mut metadata: serde_json::Value) -> Checkpoint<T> {
        let mut tensors = Vec::new();
        Self::push_net(&mut tensors, "policy", &self.policy);
        tensors.push(NamedTensor::new("policy.log_std", vec![self.head.dim()], self.head.log_std.clone()));
        Self::push_net(&mut tensors, "critic", &self.critic);
        if let Some(e) = &self.estimator {
            Self::push_net(&mut tensors, "estimator", e);
        }
        if let Some(obj) = metadata.as_object_mut() {
            obj.insert("mode".into(), serde_json::to_value(self.mode).unwrap());
            obj.insert("activation".into(), serde_json::to_value(self.policy.activation).unwrap());
            obj.insert("obs_width".into(), self.obs_width.into());
        }
        Checkpoint { tensors, config_hash: config_hash.to_string(), metadata }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self, NnError> {
        let meta = |key: &str| {
            ck.metadata.get(key).cloned().ok_or_else(|| NnError::Checkpoint(format!("metadata lacks {key}")))
        };
        let bad = |e: serde_json::Error| NnError::Checkpoint(e.to_string());
        let mode: TaskMode = serde_json::from_value(meta("mode")?).map_err(bad)?;
        let activation: Activation = serde_json::from_value(meta("activation")?).map_err(bad)?;
        let obs_width = meta("obs_width")?.as_u64().ok_or_else(|| NnError::Checkpoint("obs_width".into()))? as usize;
        let missing = |n: &str| NnError::Checkpoint(format!("missing network {n}"));
        let policy = Self::read_net(ck, "policy", activation)?.ok_or_else(|| missing("policy"))?;
        let critic = Self::read_net(ck, "critic", activation)?.ok_or_else(|| missing("critic"))?;
        let estimator = Self::read_net(ck, "estimator", activation)?;
        let log_std = ck.get("policy.log_std")?.data.clone();
        let est = estimator.as_ref().map_or(0, |e| e.output_width());
        if policy.input_width() != obs_width + est {
            return Err(NnError::ShapeMismatch { expected: obs_width + est, got: policy.input_width() });
        }
        if log_std.len() != policy.output_width() {
            return Err(NnError::ShapeMismatch { expected: policy.output_width(), got: log_std.len() });
        }
        Ok(Self { mode, obs_width, policy, head: GaussianHead { log_std }, critic, estimator })
    }

    pub fn save(&self, path: &Path, config_hash: &str, metadata: serde_json::Value) -> Result<(), NnError> {
        save_checkpoint(path, &self.to_checkpoint(config_hash, metadata))
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::from_checkpoint(&load_checkpoint(path)?)
    }
}
