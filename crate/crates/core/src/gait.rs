//! Gait timing reference variables and the desired contact schedule.

use serde::{Deserialize, Serialize};

use crate::config::{positive, NUM_LEGS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitSchedule {
    pub period: f64,
    /// Stance fraction of the cycle.
    pub duty: f64,
    /// Per-foot phase offsets, leg order FR, FL, RR, RL.
    pub offsets: [f64; NUM_LEGS],
    /// Logistic slope of the stance/swing transition (per unit phase).
    pub sharpness: f64,
}

impl Default for GaitSchedule {
    /// Trot.
    fn default() -> Self {
        Self { period: 0.5, duty: 0.5, offsets: [0.0, 0.5, 0.5, 0.0], sharpness: 50.0 }
    }
}

impl GaitSchedule {
    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        positive(errs, path, "period", self.period);
        positive(errs, path, "sharpness", self.sharpness);
        if !(self.duty > 0.0 && self.duty < 1.0) {
            errs.push(format!("{path}.duty: must lie in (0, 1) (got {})", self.duty));
        }
        for (i, o) in self.offsets.iter().enumerate() {
            if !(0.0..1.0).contains(o) {
                errs.push(format!("{path}.offsets[{i}]: must lie in [0, 1) (got {o})"));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingVars {
    /// `sin(2 pi phase)` per foot.
    pub theta: [f64; NUM_LEGS],
    /// Phase in [0, 1) per foot.
    pub phases: [f64; NUM_LEGS],
}

pub fn advance_gait_phase(t: f64, schedule: &GaitSchedule) -> TimingVars {
    let base = t / schedule.period;
    let mut phases = [0.0; NUM_LEGS];
    let mut theta = [0.0; NUM_LEGS];
    for i in 0..NUM_LEGS {
        let p = (base + schedule.offsets[i]).rem_euclid(1.0);
        phases[i] = p;
        theta[i] = (std::f64::consts::TAU * p).sin();
    }
    TimingVars { theta, phases }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth stance indicator: near 1 for `phase < duty`, near 0 in swing, and
/// exactly 0.5 at the duty boundary. The second product handles the
/// wrap-around transition at phase 1.
pub fn desired_contact_single(phase: f64, duty: f64, sharpness: f64) -> f64 {
    let s = sharpness;
    sigmoid(s * phase) * sigmoid(s * (duty - phase)) + sigmoid(s * (phase - 1.0)) * sigmoid(s * (duty - phase + 1.0))
}

pub fn desired_contact(phases: &[f64; NUM_LEGS], schedule: &GaitSchedule) -> [f64; NUM_LEGS] {
    phases.map(|p| desired_contact_single(p, schedule.duty, schedule.sharpness))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trot_starts_at_zero_theta() {
        let v = advance_gait_phase(0.0, &GaitSchedule::default());
        for th in v.theta {
            assert!(th.abs() < 1e-15);
        }
    }

    #[test]
    fn quarter_period_peaks_front_right() {
        let g = GaitSchedule::default();
        let v = advance_gait_phase(g.period / 4.0, &g);
        assert!((v.theta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn timing_is_periodic() {
        let g = GaitSchedule::default();
        for k in 0..200 {
            let t = k as f64 * 0.0137;
            let a = advance_gait_phase(t, &g).theta;
            let b = advance_gait_phase(t + g.period, &g).theta;
            for i in 0..NUM_LEGS {
                assert!((a[i] - b[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contact_schedule_shape() {
        let g = GaitSchedule::default();
        let k = |p| desired_contact_single(p, g.duty, g.sharpness);
        assert!(k(0.25) > 0.99);
        assert!(k(0.75) < 0.01);
        assert!((k(0.5) - 0.5).abs() < 1e-6);
        for i in 0..1000 {
            let v = k(i as f64 / 1000.0);
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn validation_flags_bad_duty() {
        let mut g = GaitSchedule::default();
        g.duty = 1.0;
        g.offsets[2] = 1.0;
        let mut errs = Vec::new();
        g.validate_into("env.gait", &mut errs);
        assert_eq!(errs.len(), 2);
        assert!(errs[0].starts_with("env.gait.duty"));
    }
}
