use serde::{Deserialize, Serialize};

use crate::rng::{self, SimRng};

use super::Scalar;

pub const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal Gaussian with a state-independent log standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead<T> {
    pub log_std: Vec<T>,
}

impl<T: Scalar> GaussianHead<T> {
    pub fn new(dim: usize, init_log_std: f64) -> Self {
        Self { log_std: vec![T::from_f64(init_log_std); dim] }
    }

    pub fn dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.as_f64().exp()).collect()
    }

    /// Draws `mean + std * eps` and returns the action and its log density.
    pub fn sample(&self, mean: &[T], rng: &mut SimRng) -> (Vec<T>, f64) {
        let mut action = Vec::with_capacity(mean.len());
        for (m, l) in mean.iter().zip(&self.log_std) {
            let eps = rng::normal(rng);
            action.push(T::from_f64(m.as_f64() + l.as_f64().exp() * eps));
        }
        let lp = self.log_prob(mean, &action);
        (action, lp)
    }

    pub fn log_prob(&self, mean: &[T], action: &[T]) -> f64 {
        let mut lp = 0.0;
        for ((m, a), l) in mean.iter().zip(action).zip(&self.log_std) {
            let l = l.as_f64();
            let z = (a.as_f64() - m.as_f64()) / l.exp();
            lp += -0.5 * z * z - l - 0.5 * LOG_2PI;
        }
        lp
    }

    /// Closed-form entropy `sum(0.5 ln(2 pi e sigma^2))`.
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| 0.5 * (LOG_2PI + 1.0) + l.as_f64()).sum()
    }

    /// Gradients of the log density: `(d/d mean, d/d log_std)` per dim.
    pub fn log_prob_grads(&self, mean: &[T], action: &[T], d_mean: &mut [f64], d_log_std: &mut [f64]) {
        for i in 0..self.dim() {
            let l = self.log_std[i].as_f64();
            let var = (2.0 * l).exp();
            let diff = action[i].as_f64() - mean[i].as_f64();
            d_mean[i] = diff / var;
            d_log_std[i] = diff * diff / var - 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_closed_form() {
        let h = GaussianHead::<f64> { log_std: vec![-0.5, 0.2, 1.0] };
        let expected: f64 = [-0.5f64, 0.2, 1.0]
            .iter()
            .map(|l| 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * (2.0 * l).exp()).ln())
            .sum();
        assert!((h.entropy() - expected).abs() < 1e-12);
    }

    #[test]
    fn tiny_std_returns_mean() {
        let h = GaussianHead::<f64>::new(4, -30.0);
        let mut rng = rng::stream(1, 0);
        let mean = [0.3, -1.0, 2.0, 0.0];
        let (a, _) = h.sample(&mean, &mut rng);
        for (x, m) in a.iter().zip(&mean) {
            assert!((x - m).abs() < 1e-9);
        }
    }

    #[test]
    fn sample_moments_match_parameters() {
        let h = GaussianHead::<f64> { log_std: vec![(0.7f64).ln()] };
        let mut rng = rng::stream(2, 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let (a, _) = h.sample(&[1.5], &mut rng);
            s += a[0];
            s2 += a[0] * a[0];
        }
        let mean = s / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((mean - 1.5).abs() < 0.015);
        assert!((std - 0.7).abs() < 0.007);
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let mut h = GaussianHead::<f64> { log_std: vec![-0.3, 0.4] };
        let mean = [0.2, -0.5];
        let action = [0.9, -1.4];
        let mut dm = [0.0; 2];
        let mut dl = [0.0; 2];
        h.log_prob_grads(&mean, &action, &mut dm, &mut dl);
        let eps = 1e-6;
        for i in 0..2 {
            let mut up = mean;
            up[i] += eps;
            let mut dn = mean;
            dn[i] -= eps;
            let fd = (h.log_prob(&up, &action) - h.log_prob(&dn, &action)) / (2.0 * eps);
            assert!((fd - dm[i]).abs() < 1e-6);
            let orig = h.log_std[i];
            h.log_std[i] = orig + eps;
            let a = h.log_prob(&mean, &action);
            h.log_std[i] = orig - eps;
            let b = h.log_prob(&mean, &action);
            h.log_std[i] = orig;
            assert!(((a - b) / (2.0 * eps) - dl[i]).abs() < 1e-6);
        }
    }
}
