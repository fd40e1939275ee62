//! Episode dynamics sampling and runtime noise events.
//!
//! `RandomizationRanges` mirrors the training randomization table. One
//! `EpisodeDynamics` is drawn per reset and stays fixed until the next one;
//! the noise events (ball teleport, ball velocity kick, gravity
//! perturbation, camera arrivals, vision noise) draw from a separate stream
//! while the episode runs.

use nalgebra::Vector3;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::config::{TaskMode, NUM_JOINTS};
use crate::rng::{self, SimRng};
use crate::world::BallState;

pub type Range = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationRanges {
    pub payload_mass: Range,
    /// Fraction of nominal torque (0.9 = 90 %).
    pub motor_strength: Range,
    pub joint_calibration: Range,
    pub friction: Range,
    pub restitution: Range,
    pub com_displacement: Range,
    pub ball_mass: Range,
    pub teleport_radius: Range,
    pub perturbation_velocity: Range,
    pub drag_coeff: Range,
    /// Terrain height-noise amplitude (m), recovery only.
    pub perlin_magnitude: Range,
    /// Per-axis gravity perturbation (m/s^2), recovery only.
    pub gravity_noise: Range,
    pub command_vx: Range,
    pub command_vy: Range,
    /// Mean camera inter-arrival time (s).
    pub camera_mean_arrival: Range,
    /// Actuator torque lag time constant (s).
    pub actuator_lag: Range,
    /// Optional probability that a camera frame is delivered at all.
    pub frame_arrival_probability: Option<Range>,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            payload_mass: [-1.0, 3.0],
            motor_strength: [0.9, 1.1],
            joint_calibration: [-0.02, 0.02],
            friction: [0.40, 1.00],
            restitution: [0.0, 1.0],
            com_displacement: [-0.15, 0.15],
            ball_mass: [0.159, 0.254],
            teleport_radius: [0.0, 1.0],
            perturbation_velocity: [0.0, 0.3],
            drag_coeff: [0.0, 1.5],
            perlin_magnitude: [0.0, 0.10],
            gravity_noise: [-1.0, 1.0],
            command_vx: [-1.5, 1.5],
            command_vy: [-1.5, 1.5],
            camera_mean_arrival: [0.020, 0.060],
            actuator_lag: [0.005, 0.025],
            frame_arrival_probability: None,
        }
    }
}

impl RandomizationRanges {
    fn all(&self) -> Vec<(&'static str, Range)> {
        let mut v = vec![
            ("payload_mass", self.payload_mass),
            ("motor_strength", self.motor_strength),
            ("joint_calibration", self.joint_calibration),
            ("friction", self.friction),
            ("restitution", self.restitution),
            ("com_displacement", self.com_displacement),
            ("ball_mass", self.ball_mass),
            ("teleport_radius", self.teleport_radius),
            ("perturbation_velocity", self.perturbation_velocity),
            ("drag_coeff", self.drag_coeff),
            ("perlin_magnitude", self.perlin_magnitude),
            ("gravity_noise", self.gravity_noise),
            ("command_vx", self.command_vx),
            ("command_vy", self.command_vy),
            ("camera_mean_arrival", self.camera_mean_arrival),
            ("actuator_lag", self.actuator_lag),
        ];
        if let Some(p) = self.frame_arrival_probability {
            v.push(("frame_arrival_probability", p));
        }
        v
    }

    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        for (name, [lo, hi]) in self.all() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                errs.push(format!("{path}.{name}: need finite lo <= hi (got [{lo}, {hi}])"));
            }
        }
        if self.ball_mass[0] <= 0.0 {
            errs.push(format!("{path}.ball_mass: must be positive"));
        }
        if self.camera_mean_arrival[0] <= 0.0 {
            errs.push(format!("{path}.camera_mean_arrival: must be positive"));
        }
        if self.drag_coeff[0] < 0.0 {
            errs.push(format!("{path}.drag_coeff: must be non-negative"));
        }
    }

    pub fn contains(r: Range, v: f64) -> bool {
        v >= r[0] && v <= r[1]
    }
}

/// Cadence and magnitude of runtime noise events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub teleport_interval_s: f64,
    pub perturb_interval_s: f64,
    pub gravity_interval_s: f64,
    /// Half-width of the uniform ball-position noise per axis (m).
    pub vision_noise_half_width: f64,
    pub max_action_delay_substeps: u32,
    pub teleport: bool,
    pub perturb: bool,
    pub camera_delay: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            teleport_interval_s: 7.0,
            perturb_interval_s: 4.0,
            gravity_interval_s: 6.0,
            vision_noise_half_width: 0.05,
            max_action_delay_substeps: 4,
            teleport: true,
            perturb: true,
            camera_delay: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        crate::config::positive(errs, path, "teleport_interval_s", self.teleport_interval_s);
        crate::config::positive(errs, path, "perturb_interval_s", self.perturb_interval_s);
        crate::config::positive(errs, path, "gravity_interval_s", self.gravity_interval_s);
        if !(self.vision_noise_half_width >= 0.0) {
            errs.push(format!("{path}.vision_noise_half_width: must be non-negative"));
        }
    }

    /// Noise switched off entirely; used by deterministic harnesses.
    pub fn disabled() -> Self {
        Self {
            vision_noise_half_width: 0.0,
            max_action_delay_substeps: 0,
            teleport: false,
            perturb: false,
            camera_delay: false,
            ..Self::default()
        }
    }
}

/// One concrete draw of every randomized parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDynamics {
    pub mode: TaskMode,
    pub payload_mass: f64,
    pub motor_strength: [f64; NUM_JOINTS],
    pub joint_calibration: [f64; NUM_JOINTS],
    pub friction: f64,
    pub restitution: f64,
    pub com_displacement: [f64; 3],
    pub ball_mass: f64,
    pub drag_coeff: f64,
    pub teleport_radius: f64,
    pub perturbation_velocity_max: f64,
    pub perlin_magnitude: f64,
    pub terrain_seed: u64,
    pub gravity_noise: f64,
    pub camera_mean_arrival: f64,
    pub frame_arrival_probability: f64,
    pub vision_noise_half_width: f64,
    pub actuator_lag: f64,
    pub action_delay_substeps: u32,
}

impl EpisodeDynamics {
    /// Nominal parameters with every randomization at its neutral value.
    pub fn nominal(mode: TaskMode) -> Self {
        Self {
            mode,
            payload_mass: 0.0,
            motor_strength: [1.0; NUM_JOINTS],
            joint_calibration: [0.0; NUM_JOINTS],
            friction: 0.7,
            restitution: 0.0,
            com_displacement: [0.0; 3],
            ball_mass: 0.2,
            drag_coeff: 0.5,
            teleport_radius: 1.0,
            perturbation_velocity_max: 0.3,
            perlin_magnitude: 0.0,
            terrain_seed: 0,
            gravity_noise: 0.0,
            camera_mean_arrival: 0.04,
            frame_arrival_probability: 1.0,
            vision_noise_half_width: 0.0,
            actuator_lag: 0.0,
            action_delay_substeps: 0,
        }
    }

    /// Order-sensitive fingerprint over every field's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        let text = serde_json::to_string(self).expect("dynamics serialize");
        text.hash(&mut h);
        h.finish()
    }
}

fn draw(rng: &mut SimRng, r: Range) -> f64 {
    rng::uniform(rng, r[0], r[1])
}

/// Draws one `EpisodeDynamics`. Terrain and gravity noise are only active
/// in recovery mode.
pub fn sample_episode_dynamics(
    rng: &mut SimRng,
    ranges: &RandomizationRanges,
    noise: &NoiseConfig,
    mode: TaskMode,
) -> EpisodeDynamics {
    let mut strength = [0.0; NUM_JOINTS];
    for s in strength.iter_mut() {
        *s = draw(rng, ranges.motor_strength);
    }
    let mut calib = [0.0; NUM_JOINTS];
    for c in calib.iter_mut() {
        *c = draw(rng, ranges.joint_calibration);
    }
    let com =
        [draw(rng, ranges.com_displacement), draw(rng, ranges.com_displacement), draw(rng, ranges.com_displacement)];
    let recovery = mode == TaskMode::Recovery;
    let perlin = draw(rng, ranges.perlin_magnitude);
    let terrain_seed = rng.next_u64();
    EpisodeDynamics {
        mode,
        payload_mass: draw(rng, ranges.payload_mass),
        motor_strength: strength,
        joint_calibration: calib,
        friction: draw(rng, ranges.friction),
        restitution: draw(rng, ranges.restitution),
        com_displacement: com,
        ball_mass: draw(rng, ranges.ball_mass),
        drag_coeff: draw(rng, ranges.drag_coeff),
        teleport_radius: ranges.teleport_radius[1],
        perturbation_velocity_max: ranges.perturbation_velocity[1],
        perlin_magnitude: if recovery { perlin } else { 0.0 },
        terrain_seed,
        gravity_noise: if recovery { ranges.gravity_noise[1] } else { 0.0 },
        camera_mean_arrival: draw(rng, ranges.camera_mean_arrival),
        frame_arrival_probability: ranges.frame_arrival_probability.map_or(1.0, |r| draw(rng, r)),
        vision_noise_half_width: noise.vision_noise_half_width,
        actuator_lag: draw(rng, ranges.actuator_lag),
        action_delay_substeps: rng.random_range(0..=noise.max_action_delay_substeps),
    }
}

/// Convenience wrapper drawing from a fresh stream keyed by `seed`.
pub fn sample_episode_dynamics_seeded(
    seed: u64,
    ranges: &RandomizationRanges,
    noise: &NoiseConfig,
    mode: TaskMode,
) -> EpisodeDynamics {
    let mut rng = rng::stream(seed, 0);
    sample_episode_dynamics(&mut rng, ranges, noise, mode)
}

/// True when `t` is a positive integer multiple of `period`.
pub fn interval_fires(t: f64, period: f64) -> bool {
    if t <= 0.0 || period <= 0.0 {
        return false;
    }
    let k = t / period;
    k >= 1.0 - 1e-9 && (k - k.round()).abs() <= 1e-9 * k.max(1.0)
}

/// Teleports the ball by an area-uniform displacement within `radius` when
/// `t` lands on the teleport interval. Returns whether it fired.
pub fn maybe_teleport_ball(t: f64, ball: &mut BallState, rng: &mut SimRng, interval: f64, radius: f64) -> bool {
    if !interval_fires(t, interval) {
        return false;
    }
    let [dx, dy] = rng::disk(rng, radius);
    ball.position.x += dx;
    ball.position.y += dy;
    true
}

/// Adds a planar velocity kick of uniform magnitude in `[0, max_speed]`
/// and uniform direction. Returns the kick.
pub fn perturb_ball_velocity(ball: &mut BallState, rng: &mut SimRng, max_speed: f64) -> Vector3<f64> {
    let speed = rng::uniform(rng, 0.0, max_speed);
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let kick = Vector3::new(speed * phi.cos(), speed * phi.sin(), 0.0);
    ball.velocity += kick;
    kick
}

/// Exponential inter-arrival time with the given mean (Poisson arrivals).
pub fn sample_camera_delay(rng: &mut SimRng, mean_arrival: f64) -> f64 {
    -mean_arrival * rng::open01(rng).ln()
}

/// Independent uniform noise per axis with the given half-width.
pub fn corrupt_ball_observation(b_true: Vector3<f64>, half_width: f64, rng: &mut SimRng) -> Vector3<f64> {
    if half_width <= 0.0 {
        return b_true;
    }
    let mut out = b_true;
    for i in 0..3 {
        out[i] += rng::uniform(rng, -half_width, half_width);
    }
    out
}

/// Gravity vector after a perturbation event, or `None` when no event fires
/// at `t` (dribble mode never fires).
pub fn perturb_gravity(
    t: f64,
    rng: &mut SimRng,
    dynamics: &EpisodeDynamics,
    interval: f64,
    g: f64,
) -> Option<Vector3<f64>> {
    if dynamics.mode != TaskMode::Recovery || !interval_fires(t, interval) {
        return None;
    }
    let h = dynamics.gravity_noise;
    Some(Vector3::new(rng::uniform(rng, -h, h), rng::uniform(rng, -h, h), -g + rng::uniform(rng, -h, h)))
}
