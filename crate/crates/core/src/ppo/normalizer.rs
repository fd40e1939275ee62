use serde::{Deserialize, Serialize};

/// Streaming mean and variance (Chan et al. parallel update), population
/// variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self { mean: 0.0, var: 0.0, count: 0.0 }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let total = self.count + n;
        let delta = mean - self.mean;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Divides rewards by the running standard deviation of each environment's
/// discounted return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardNormalizer {
    pub gamma: f64,
    pub returns: Vec<f64>,
    pub stats: RunningMeanStd,
}

const MIN_STD: f64 = 1e-8;

impl RewardNormalizer {
    pub fn new(n_envs: usize, gamma: f64) -> Self {
        Self { gamma, returns: vec![0.0; n_envs], stats: RunningMeanStd::default() }
    }

    /// Scales one synchronous step of rewards in place. `dones` reset the
    /// affected return accumulators after the update.
    pub fn normalize(&mut self, rewards: &mut [f64], dones: &[bool]) {
        assert_eq!(rewards.len(), self.returns.len());
        for (ret, r) in self.returns.iter_mut().zip(rewards.iter()) {
            *ret = *ret * self.gamma + r;
        }
        self.stats.update(&self.returns);
        let std = self.stats.std();
        if std > MIN_STD {
            for r in rewards.iter_mut() {
                *r /= std;
            }
        }
        for (ret, d) in self.returns.iter_mut().zip(dones) {
            if *d {
                *ret = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn running_stats_match_batch_stats() {
        let mut rng = rng::stream(1, 0);
        let xs: Vec<f64> = (0..1000).map(|_| 3.0 + 2.0 * rng::normal(&mut rng)).collect();
        let mut s = RunningMeanStd::default();
        for c in xs.chunks(37) {
            s.update(c);
        }
        let mean = xs.iter().sum::<f64>() / 1000.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1000.0;
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.var - var).abs() < 1e-10);
    }

    #[test]
    fn zero_rewards_pass_through() {
        let mut n = RewardNormalizer::new(3, 0.99);
        for _ in 0..10 {
            let mut r = [0.0; 3];
            n.normalize(&mut r, &[false; 3]);
            assert_eq!(r, [0.0; 3]);
        }
    }

    #[test]
    fn output_becomes_scale_invariant() {
        let run = |c: f64| {
            let mut n = RewardNormalizer::new(4, 0.99);
            let mut rng = rng::stream(2, 0);
            let mut last = Vec::new();
            for step in 0..20_000 {
                let mut r: Vec<f64> = (0..4).map(|_| c * (1.0 + rng::normal(&mut rng))).collect();
                let d: Vec<bool> = (0..4).map(|i| (step + i * 7) % 200 == 0).collect();
                n.normalize(&mut r, &d);
                last = r;
            }
            last
        };
        let a = run(1.0);
        let b = run(50.0);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn state_round_trips_through_json() {
        let mut n = RewardNormalizer::new(2, 0.99);
        n.normalize(&mut [0.3, -1.7], &[false, true]);
        n.normalize(&mut [0.1, 2.2], &[false, false]);
        let text = serde_json::to_string(&n).unwrap();
        let back: RewardNormalizer = serde_json::from_str(&text).unwrap();
        assert_eq!(back, n);
    }
}
