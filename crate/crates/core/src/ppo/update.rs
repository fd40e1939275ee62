use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::NUM_JOINTS;
use crate::error::{NnError, TrainError};
use crate::nn::{Adam, Scalar};
use crate::rng::SimRng;

use super::model::{ActorCritic, Grads};
use super::trainer::RolloutBuffer;
use super::PpoConfig;

/// Chunks whose gradients are held in memory at once.
const CHUNK_GROUP: usize = 16;

/// Rows gathered from a rollout buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch<T> {
    pub rows: usize,
    pub obs: Vec<T>,
    /// Estimator outputs recorded during the rollout.
    pub est_pred: Vec<T>,
    pub targets: Vec<T>,
    pub actions: Vec<T>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// Loss sums over the rows seen so far.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub rows: usize,
    pub policy: f64,
    pub value: f64,
    /// Unweighted squared estimator error summed over rows, averaged over
    /// outputs.
    pub estimator: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clipped: f64,
    pub grad_norm: f64,
    pub minibatches: usize,
}

impl LossStats {
    fn add(&mut self, o: &LossStats) {
        self.rows += o.rows;
        self.policy += o.policy;
        self.value += o.value;
        self.estimator += o.estimator;
        self.approx_kl += o.approx_kl;
        self.clipped += o.clipped;
    }

    pub fn is_finite(&self) -> bool {
        [self.policy, self.value, self.estimator, self.entropy, self.approx_kl].iter().all(|v| v.is_finite())
    }

    /// The scalar minimized by one minibatch step.
    pub fn objective(&self, cfg: &PpoConfig) -> f64 {
        let n = self.rows.max(1) as f64;
        (self.policy + cfg.value_coef * self.value + cfg.estimator_coef * self.estimator) / n
            - cfg.entropy_coef * self.entropy
    }

    /// Per-row means, for logging.
    pub fn summary(&self) -> serde_json::Value {
        let n = self.rows.max(1) as f64;
        let mb = self.minibatches.max(1) as f64;
        serde_json::json!({
            "policy": self.policy / n,
            "value": self.value / n,
            "estimator": self.estimator / n,
            "entropy": self.entropy / mb,
            "approx_kl": self.approx_kl / n,
            "clip_fraction": self.clipped / n,
            "grad_norm": self.grad_norm / mb,
        })
    }
}

/// Clipped surrogate `min(r A, clip(r) A)` and its derivative in `r`.
pub fn surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, adv)
    } else {
        (clipped, 0.0)
    }
}

fn concat_rows<T: Copy>(a: &[T], wa: usize, b: &[T], wb: usize, rows: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(&a[r * wa..(r + 1) * wa]);
        out.extend_from_slice(&b[r * wb..(r + 1) * wb]);
    }
    out
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Gradient of the PPO objective restricted to `mb`, with every per-row
/// term divided by `norm_rows` (the full minibatch size) so that chunk
/// gradients sum to the minibatch mean. The entropy bonus is not included;
/// it is state independent and added once per minibatch.
pub fn minibatch_gradient<T: Scalar>(
    model: &ActorCritic<T>,
    mb: &Minibatch<T>,
    cfg: &PpoConfig,
    norm_rows: usize,
) -> Result<(Grads, LossStats), NnError> {
    let m = mb.rows;
    let w = model.obs_width;
    let e = model.estimator_width();
    let inv = 1.0 / norm_rows as f64;
    let mut grads = Grads::zeros_like(model);
    let mut stats = LossStats { rows: m, ..LossStats::default() };

    let est_cache = match &model.estimator {
        Some(net) => Some(net.forward_cached(&mb.obs, m)?),
        None => None,
    };
    let policy_extra: &[T] = match (&est_cache, cfg.block_estimator_grad) {
        (Some(c), false) => &c.output,
        _ => &mb.est_pred,
    };
    let p_in = concat_rows(&mb.obs, w, policy_extra, e, m);
    let pc = model.policy.forward_cached(&p_in, m)?;

    let mut d_mean = vec![T::zero(); m * NUM_JOINTS];
    let mut dm = [0.0; NUM_JOINTS];
    let mut dl = [0.0; NUM_JOINTS];
    for r in 0..m {
        let mean = &pc.output[r * NUM_JOINTS..(r + 1) * NUM_JOINTS];
        let action = &mb.actions[r * NUM_JOINTS..(r + 1) * NUM_JOINTS];
        let logp = model.head.log_prob(mean, action);
        let ratio = (logp - mb.old_log_probs[r]).exp();
        let (s, ds) = surrogate(ratio, mb.advantages[r], cfg.clip);
        stats.policy -= s;
        stats.approx_kl += mb.old_log_probs[r] - logp;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clipped += 1.0;
        }
        let g_logp = -ds * ratio * inv;
        if g_logp != 0.0 {
            model.head.log_prob_grads(mean, action, &mut dm, &mut dl);
            for j in 0..NUM_JOINTS {
                d_mean[r * NUM_JOINTS + j] = T::from_f64(g_logp * dm[j]);
                grads.log_std[j] += g_logp * dl[j];
            }
        }
    }
    let mut gp = vec![T::zero(); model.policy.num_params()];
    let d_policy_in = model.policy.backward(&pc, &d_mean, &mut gp);
    grads.policy = to_f64(&gp);

    if let (Some(net), Some(cache)) = (&model.estimator, &est_cache) {
        let mut d_est = vec![T::zero(); m * e];
        for r in 0..m {
            for k in 0..e {
                let diff = cache.output[r * e + k].as_f64() - mb.targets[r * e + k].as_f64();
                stats.estimator += diff * diff / e as f64;
                let mut g = cfg.estimator_coef * 2.0 * diff / e as f64 * inv;
                if !cfg.block_estimator_grad {
                    g += d_policy_in[r * (w + e) + w + k].as_f64();
                }
                d_est[r * e + k] = T::from_f64(g);
            }
        }
        let mut ge = vec![T::zero(); net.num_params()];
        net.backward(cache, &d_est, &mut ge);
        grads.estimator = to_f64(&ge);
    }

    let c_in = concat_rows(&mb.obs, w, &mb.targets, e, m);
    let cc = model.critic.forward_cached(&c_in, m)?;
    let mut d_v = vec![T::zero(); m];
    for r in 0..m {
        let diff = cc.output[r].as_f64() - mb.returns[r];
        stats.value += diff * diff;
        d_v[r] = T::from_f64(cfg.value_coef * 2.0 * diff * inv);
    }
    let mut gc = vec![T::zero(); model.critic.num_params()];
    model.critic.backward(&cc, &d_v, &mut gc);
    grads.critic = to_f64(&gc);
    Ok((grads, stats))
}

/// One Adam state per trainable tensor group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers<T> {
    pub policy: Adam<T>,
    pub log_std: Adam<T>,
    pub critic: Adam<T>,
    pub estimator: Option<Adam<T>>,
}

impl<T: Scalar> Optimizers<T> {
    pub fn new(model: &ActorCritic<T>, cfg: &PpoConfig) -> Self {
        let a = |n| Adam::new(n, cfg.adam.clone());
        Self {
            policy: a(model.policy.num_params()),
            log_std: a(model.head.dim()),
            critic: a(model.critic.num_params()),
            estimator: model.estimator.as_ref().map(|e| a(e.num_params())),
        }
    }

    pub fn step(&mut self, model: &mut ActorCritic<T>, g: &Grads) {
        self.policy.step(&mut model.policy.params, &g.policy);
        self.log_std.step(&mut model.head.log_std, &g.log_std);
        self.critic.step(&mut model.critic.params, &g.critic);
        if let (Some(opt), Some(net)) = (&mut self.estimator, &mut model.estimator) {
            opt.step(&mut net.params, &g.estimator);
        }
    }
}

fn dump(buf_mb: &Minibatch<impl Scalar>) -> String {
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| if x.is_finite() { m.max(x.abs()) } else { f64::INFINITY });
    let obs: Vec<f64> = buf_mb.obs.iter().map(|x| x.as_f64()).collect();
    format!(
        "rows={} max|obs|={:.3e} max|adv|={:.3e} max|ret|={:.3e} max|old_logp|={:.3e}",
        buf_mb.rows,
        max_abs(&obs),
        max_abs(&buf_mb.advantages),
        max_abs(&buf_mb.returns),
        max_abs(&buf_mb.old_log_probs)
    )
}

/// Runs `epochs x minibatches` clipped-PPO steps over the buffer.
///
/// Each epoch shuffles all `n_envs x steps` sample indices with `rng`.
/// Minibatch gradients are computed over chunks of `chunk_rows` rows in
/// parallel and summed in chunk order.
pub fn ppo_update<T: Scalar>(
    model: &mut ActorCritic<T>,
    opt: &mut Optimizers<T>,
    buffer: &RolloutBuffer<T>,
    cfg: &PpoConfig,
    rng: &mut SimRng,
) -> Result<LossStats, TrainError> {
    let n = buffer.len();
    let mb_size = n / cfg.minibatches;
    let mut total = LossStats::default();
    let mut perm: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        perm.shuffle(rng);
        for k in 0..cfg.minibatches {
            let idx = &perm[k * mb_size..(k + 1) * mb_size];
            let chunks: Vec<&[usize]> = idx.chunks(cfg.chunk_rows).collect();
            let mut grads = Grads::zeros_like(model);
            let mut stats = LossStats::default();
            for group in chunks.chunks(CHUNK_GROUP) {
                let model_ref = &*model;
                let parts = group
                    .par_iter()
                    .map(|rows| {
                        let mb = buffer.gather(rows);
                        minibatch_gradient(model_ref, &mb, cfg, mb_size).map(|(g, s)| (g, s, mb))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                for (g, s, mb) in parts {
                    if !s.is_finite() || !g.is_finite() {
                        return Err(TrainError::NonFiniteLoss { epoch, minibatch: k, detail: dump(&mb) });
                    }
                    grads.add(&g);
                    stats.add(&s);
                }
            }
            stats.entropy = model.head.entropy();
            for g in grads.log_std.iter_mut() {
                *g -= cfg.entropy_coef;
            }
            let norm = grads.norm();
            if !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, minibatch: k, detail: format!("gradient norm {norm}") });
            }
            if cfg.max_grad_norm > 0.0 && norm > cfg.max_grad_norm {
                grads.scale(cfg.max_grad_norm / norm);
            }
            opt.step(model, &grads);
            total.add(&stats);
            total.entropy += stats.entropy;
            total.grad_norm += norm;
            total.minibatches += 1;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{RobotConstants, TaskMode};
    use crate::nn::NetConfig;
    use crate::rng;

    #[test]
    fn surrogate_clips_large_ratios() {
        let (s, ds) = surrogate(1.5, 2.0, 0.2);
        assert!((s - 1.2 * 2.0).abs() < 1e-15);
        assert_eq!(ds, 0.0);
        let (s, ds) = surrogate(0.5, -1.0, 0.2);
        assert!((s - -0.8).abs() < 1e-15);
        assert_eq!(ds, 0.0);
        assert_eq!(surrogate(1.1, 3.0, 0.2), (1.1 * 3.0, 3.0));
        // Pessimistic side keeps the gradient.
        assert_eq!(surrogate(0.5, 2.0, 0.2), (1.0, 2.0));
    }

    fn tiny_model() -> ActorCritic<f64> {
        let nets = NetConfig {
            policy_hidden: vec![6],
            estimator_hidden: vec![5],
            critic_hidden: vec![7],
            policy_output_gain: 1.0,
            ..NetConfig::default()
        };
        ActorCritic::new(TaskMode::Dribble, 1, &nets, &RobotConstants::default(), &mut rng::stream(4, 0))
    }

    fn random_batch(model: &ActorCritic<f64>, rows: usize, near_policy: bool) -> Minibatch<f64> {
        let mut r = rng::stream(9, 0);
        let w = model.obs_width;
        let obs: Vec<f64> = (0..rows * w).map(|_| 0.5 * rng::normal(&mut r)).collect();
        let est: Vec<f64> = (0..rows * 6).map(|_| rng::normal(&mut r)).collect();
        let targets: Vec<f64> = (0..rows * 6).map(|_| rng::normal(&mut r)).collect();
        let p_in = concat_rows(&obs, w, &est, 6, rows);
        let mean = model.policy.forward(&p_in, rows).unwrap();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for i in 0..rows {
            let (a, lp) = model.head.sample(&mean[i * 12..(i + 1) * 12], &mut r);
            old.push(if near_policy { lp } else { lp + 0.05 * rng::normal(&mut r) });
            actions.extend(a);
        }
        Minibatch {
            rows,
            obs,
            est_pred: est,
            targets,
            actions,
            old_log_probs: old,
            advantages: (0..rows).map(|_| rng::normal(&mut r)).collect(),
            returns: (0..rows).map(|_| rng::normal(&mut r)).collect(),
        }
    }

    fn objective(model: &ActorCritic<f64>, mb: &Minibatch<f64>, cfg: &PpoConfig) -> f64 {
        let mut s = minibatch_gradient(model, mb, cfg, mb.rows).unwrap().1;
        s.entropy = model.head.entropy();
        s.objective(cfg)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for blocked in [true, false] {
            let mut model = tiny_model();
            let cfg = PpoConfig { block_estimator_grad: blocked, ..PpoConfig::default() };
            let mb = random_batch(&model, 5, false);
            let (mut g, _) = minibatch_gradient(&model, &mb, &cfg, mb.rows).unwrap();
            g.log_std.iter_mut().for_each(|x| *x -= cfg.entropy_coef);
            let h = 1e-6;
            let check = |fd: f64, an: f64, what: &str| {
                assert!((fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()), "{what}: fd {fd} vs {an}");
            };
            for i in (0..model.policy.num_params()).step_by(7) {
                let o = model.policy.params[i];
                model.policy.params[i] = o + h;
                let up = objective(&model, &mb, &cfg);
                model.policy.params[i] = o - h;
                let dn = objective(&model, &mb, &cfg);
                model.policy.params[i] = o;
                check((up - dn) / (2.0 * h), g.policy[i], "policy");
            }
            for i in 0..12 {
                let o = model.head.log_std[i];
                model.head.log_std[i] = o + h;
                let up = objective(&model, &mb, &cfg);
                model.head.log_std[i] = o - h;
                let dn = objective(&model, &mb, &cfg);
                model.head.log_std[i] = o;
                check((up - dn) / (2.0 * h), g.log_std[i], "log_std");
            }
            for i in (0..model.critic.num_params()).step_by(5) {
                let o = model.critic.params[i];
                model.critic.params[i] = o + h;
                let up = objective(&model, &mb, &cfg);
                model.critic.params[i] = o - h;
                let dn = objective(&model, &mb, &cfg);
                model.critic.params[i] = o;
                check((up - dn) / (2.0 * h), g.critic[i], "critic");
            }
            let n_est = model.estimator.as_ref().unwrap().num_params();
            for i in (0..n_est).step_by(5) {
                let net = model.estimator.as_mut().unwrap();
                let o = net.params[i];
                net.params[i] = o + h;
                let up = objective(&model, &mb, &cfg);
                model.estimator.as_mut().unwrap().params[i] = o - h;
                let dn = objective(&model, &mb, &cfg);
                model.estimator.as_mut().unwrap().params[i] = o;
                // With blocked gradients the policy term does not depend on
                // the estimator; unblocked it does.
                check((up - dn) / (2.0 * h), g.estimator[i], "estimator");
            }
        }
    }

    #[test]
    fn unit_ratio_gives_vanilla_policy_gradient() {
        let model = tiny_model();
        let cfg = PpoConfig::default();
        let mb = random_batch(&model, 6, true);
        let (g, s) = minibatch_gradient(&model, &mb, &cfg, mb.rows).unwrap();
        assert!(s.clipped == 0.0);
        // Vanilla gradient of -mean(A log pi): -A/n * dlogp/dlog_std.
        let p_in = concat_rows(&mb.obs, model.obs_width, &mb.est_pred, 6, mb.rows);
        let mean = model.policy.forward(&p_in, mb.rows).unwrap();
        let mut expect = [0.0; 12];
        for r in 0..mb.rows {
            let (mut dm, mut dl) = ([0.0; 12], [0.0; 12]);
            model.head.log_prob_grads(&mean[r * 12..(r + 1) * 12], &mb.actions[r * 12..(r + 1) * 12], &mut dm, &mut dl);
            for j in 0..12 {
                expect[j] -= mb.advantages[r] * dl[j] / mb.rows as f64;
            }
        }
        for j in 0..12 {
            assert!((g.log_std[j] - expect[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn perfect_estimator_has_zero_loss() {
        let model = tiny_model();
        let cfg = PpoConfig::default();
        let mut mb = random_batch(&model, 4, true);
        mb.targets = model.estimator.as_ref().unwrap().forward(&mb.obs, 4).unwrap();
        let (g, s) = minibatch_gradient(&model, &mb, &cfg, 4).unwrap();
        assert_eq!(s.estimator, 0.0);
        assert!(g.estimator.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn chunked_gradient_sums_to_full_batch() {
        let model = tiny_model();
        let cfg = PpoConfig::default();
        let mb = random_batch(&model, 8, false);
        let (full, _) = minibatch_gradient(&model, &mb, &cfg, 8).unwrap();
        let half = |lo: usize, hi: usize| Minibatch {
            rows: hi - lo,
            obs: mb.obs[lo * model.obs_width..hi * model.obs_width].to_vec(),
            est_pred: mb.est_pred[lo * 6..hi * 6].to_vec(),
            targets: mb.targets[lo * 6..hi * 6].to_vec(),
            actions: mb.actions[lo * 12..hi * 12].to_vec(),
            old_log_probs: mb.old_log_probs[lo..hi].to_vec(),
            advantages: mb.advantages[lo..hi].to_vec(),
            returns: mb.returns[lo..hi].to_vec(),
        };
        let (mut a, _) = minibatch_gradient(&model, &half(0, 3), &cfg, 8).unwrap();
        let (b, _) = minibatch_gradient(&model, &half(3, 8), &cfg, 8).unwrap();
        a.add(&b);
        for (x, y) in a.policy.iter().zip(&full.policy) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
