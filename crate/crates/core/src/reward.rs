//! Dribbling and recovery rewards.
//!
//! Both rewards are `r_pos * exp(r_neg)` where `r_pos` is the weighted sum
//! of the bounded task terms and `r_neg` the weighted sum of penalties
//! (negative weights on non-negative magnitudes).

use std::f64::consts::PI;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{positive, RobotConstants, NUM_JOINTS, NUM_LEGS};
use crate::world::{hip_origin, Leg, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardScales {
    pub delta_v: f64,
    pub delta_p: f64,
    pub delta_psi: f64,
    pub delta_n: f64,
    /// Per N^2 of foot force.
    pub delta_cf: f64,
    pub delta_cv: f64,
}

impl Default for RewardScales {
    fn default() -> Self {
        Self { delta_v: 2.0, delta_p: 4.0, delta_psi: 1.0, delta_n: 2.0, delta_cf: 0.01, delta_cv: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DribbleWeights {
    pub ball_velocity: f64,
    pub robot_ball_distance: f64,
    pub yaw_alignment: f64,
    pub ball_velocity_norm: f64,
    pub ball_velocity_angle: f64,
    pub swing_phase: f64,
    pub stance_phase: f64,
    pub joint_limit: f64,
    pub joint_torque: f64,
    pub joint_velocity: f64,
    pub joint_acceleration: f64,
    pub hip_thigh_collision: f64,
    pub projected_gravity: f64,
    pub action_smoothing: f64,
    pub action_smoothing_2: f64,
}

impl Default for DribbleWeights {
    fn default() -> Self {
        Self {
            ball_velocity: 0.5,
            robot_ball_distance: 4.0,
            yaw_alignment: 4.0,
            ball_velocity_norm: 4.0,
            ball_velocity_angle: 4.0,
            swing_phase: 4.0,
            stance_phase: 4.0,
            joint_limit: -10.0,
            joint_torque: -0.0001,
            joint_velocity: -0.0001,
            joint_acceleration: -2.5e-7,
            hip_thigh_collision: -5.0,
            projected_gravity: -5.0,
            action_smoothing: -0.1,
            action_smoothing_2: -0.1,
        }
    }
}

impl DribbleWeights {
    fn positive(&self) -> [f64; 7] {
        [
            self.ball_velocity,
            self.robot_ball_distance,
            self.yaw_alignment,
            self.ball_velocity_norm,
            self.ball_velocity_angle,
            self.swing_phase,
            self.stance_phase,
        ]
    }

    fn negative(&self) -> [f64; 8] {
        [
            self.joint_limit,
            self.joint_torque,
            self.joint_velocity,
            self.joint_acceleration,
            self.hip_thigh_collision,
            self.projected_gravity,
            self.action_smoothing,
            self.action_smoothing_2,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryWeights {
    pub orientation: f64,
    pub body_height: f64,
    pub body_pose: f64,
    pub foot_height: f64,
    pub action: f64,
    pub joint_torque: f64,
}

impl Default for RecoveryWeights {
    fn default() -> Self {
        Self {
            orientation: 1.0,
            body_height: 1.0,
            body_pose: 1.0,
            foot_height: 1.0,
            action: -1e-3,
            joint_torque: -1e-5,
        }
    }
}

/// Which heading the robot-ball bearing is compared against in the yaw
/// alignment term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawReference {
    /// Direction of the ball velocity.
    BallVelocity,
    /// Direction of the commanded ball velocity.
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub scales: RewardScales,
    pub dribble: DribbleWeights,
    pub recovery: RecoveryWeights,
    pub yaw_reference: YawReference,
    /// Recovery base height target; `None` uses the nominal stand height.
    pub recovery_height_target: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            scales: RewardScales::default(),
            dribble: DribbleWeights::default(),
            recovery: RecoveryWeights::default(),
            yaw_reference: YawReference::BallVelocity,
            recovery_height_target: None,
        }
    }
}

impl RewardConfig {
    pub fn validate_into(&self, path: &str, errs: &mut Vec<String>) {
        let s = &self.scales;
        let p = format!("{path}.scales");
        for (name, v) in [
            ("delta_v", s.delta_v),
            ("delta_p", s.delta_p),
            ("delta_psi", s.delta_psi),
            ("delta_n", s.delta_n),
            ("delta_cf", s.delta_cf),
            ("delta_cv", s.delta_cv),
        ] {
            positive(errs, &p, name, v);
        }
        if self.dribble.positive().iter().any(|w| *w < 0.0) {
            errs.push(format!("{path}.dribble: task weights must be non-negative"));
        }
        if self.dribble.negative().iter().any(|w| *w > 0.0) {
            errs.push(format!("{path}.dribble: penalty weights must be non-positive"));
        }
        let r = &self.recovery;
        if [r.orientation, r.body_height, r.body_pose, r.foot_height].iter().any(|w| *w < 0.0)
            || r.action > 0.0
            || r.joint_torque > 0.0
        {
            errs.push(format!("{path}.recovery: weight signs must match the term kind"));
        }
        if let Some(h) = self.recovery_height_target {
            positive(errs, path, "recovery_height_target", h);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RewardTerm {
    pub name: &'static str,
    pub value: f64,
    pub weight: f64,
    pub weighted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardBreakdown {
    pub terms: Vec<RewardTerm>,
    pub r_pos: f64,
    pub r_neg: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn compose(pos: &[(&'static str, f64, f64)], neg: &[(&'static str, f64, f64)]) -> Self {
        let mut terms = Vec::with_capacity(pos.len() + neg.len());
        let mut r_pos = 0.0;
        let mut r_neg = 0.0;
        for &(name, value, weight) in pos {
            r_pos += value * weight;
            terms.push(RewardTerm { name, value, weight, weighted: value * weight });
        }
        for &(name, value, weight) in neg {
            r_neg += value * weight;
            terms.push(RewardTerm { name, value, weight, weighted: value * weight });
        }
        Self { terms, r_pos, r_neg, total: r_pos * r_neg.exp() }
    }

    pub fn term(&self, name: &str) -> Option<&RewardTerm> {
        self.terms.iter().find(|t| t.name == name)
    }
}

pub const DRIBBLE_TERMS: [&str; 15] = [
    "ball_velocity",
    "robot_ball_distance",
    "yaw_alignment",
    "ball_velocity_norm",
    "ball_velocity_angle",
    "swing_phase",
    "stance_phase",
    "joint_limit",
    "joint_torque",
    "joint_velocity",
    "joint_acceleration",
    "hip_thigh_collision",
    "projected_gravity",
    "action_smoothing",
    "action_smoothing_2",
];

pub const RECOVERY_TERMS: [&str; 6] =
    ["orientation", "body_height", "body_pose", "foot_height", "action", "joint_torque"];

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Heading of a planar vector; zero for the zero vector.
pub fn heading(v: &Vector2<f64>) -> f64 {
    v.y.atan2(v.x)
}

/// Everything the dribbling reward reads, already expressed in the global
/// frame where relevant.
#[derive(Debug, Clone, PartialEq)]
pub struct DribbleInputs {
    pub ball_vel: Vector2<f64>,
    pub command: Vector2<f64>,
    /// Ball position, body frame.
    pub ball_body: Vector3<f64>,
    /// Front-right hip position, body frame.
    pub fr_hip_body: Vector3<f64>,
    /// Base yaw, global frame.
    pub base_yaw: f64,
    /// Heading of the robot-to-ball vector, global frame.
    pub robot_ball_heading: f64,
    pub kappa: [f64; NUM_LEGS],
    pub foot_force: [Vector3<f64>; NUM_LEGS],
    pub foot_vel: [Vector3<f64>; NUM_LEGS],
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub qdd: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub joint_lower: [f64; NUM_JOINTS],
    pub joint_upper: [f64; NUM_JOINTS],
    pub hip_thigh_collision: bool,
    pub gravity_body: Vector3<f64>,
    pub action: [f64; NUM_JOINTS],
    pub prev_action: [f64; NUM_JOINTS],
    pub prev_action_2: [f64; NUM_JOINTS],
}

fn rotate2(v: Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

impl DribbleInputs {
    /// Gathers reward inputs from the simulation. `global_yaw` is the world
    /// heading of the global command frame; `command` is expressed in it.
    /// `actions` holds `[a_t, a_{t-1}, a_{t-2}]`.
    pub fn from_world(
        world: &WorldState,
        command: Vector2<f64>,
        global_yaw: f64,
        kappa: [f64; NUM_LEGS],
        actions: [&[f64; NUM_JOINTS]; 3],
        constants: &RobotConstants,
    ) -> Self {
        let r = &world.robot;
        let ball_vel = rotate2(world.ball.velocity.xy(), -global_yaw);
        let rel = rotate2((world.ball.position - r.base_position).xy(), -global_yaw);
        Self {
            ball_vel,
            command,
            ball_body: world.ball_in_body(),
            fr_hip_body: hip_origin(Leg::FR, constants),
            base_yaw: wrap_angle(r.yaw_global - global_yaw),
            robot_ball_heading: heading(&rel),
            kappa,
            foot_force: r.foot_force,
            foot_vel: r.foot_vel,
            q: r.q,
            qd: r.qd,
            qdd: r.qdd,
            tau: r.tau,
            joint_lower: constants.joint_lower,
            joint_upper: constants.joint_upper,
            hip_thigh_collision: r.hip_thigh_collision,
            gravity_body: r.gravity_body,
            action: *actions[0],
            prev_action: *actions[1],
            prev_action_2: *actions[2],
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dribble_reward(inp: &DribbleInputs, cfg: &RewardConfig) -> RewardBreakdown {
    let s = &cfg.scales;
    let w = &cfg.dribble;
    let psi_b = heading(&inp.ball_vel);
    let psi_cmd = heading(&inp.command);

    let r_vel = (-s.delta_v * (inp.ball_vel - inp.command).norm_squared()).exp();
    let r_dist = (-s.delta_p * (inp.ball_body - inp.fr_hip_body).norm_squared()).exp();
    let yaw_ref = match cfg.yaw_reference {
        YawReference::BallVelocity => psi_b,
        YawReference::Command => psi_cmd,
    };
    let e_rbcmd = wrap_angle(inp.robot_ball_heading - yaw_ref);
    let e_rbbase = wrap_angle(inp.base_yaw - psi_b);
    let r_yaw = (-s.delta_psi * (e_rbcmd * e_rbcmd + e_rbbase * e_rbbase)).exp();
    let dn = inp.command.norm() - inp.ball_vel.norm();
    let r_norm = (-s.delta_n * dn * dn).exp();
    let dpsi = wrap_angle(psi_b - psi_cmd);
    let r_angle = 1.0 - dpsi * dpsi / (PI * PI);

    let mut swing = 0.0;
    let mut stance = 0.0;
    for i in 0..NUM_LEGS {
        let k = inp.kappa[i];
        swing += (1.0 - k) * (-s.delta_cf * inp.foot_force[i].norm_squared()).exp();
        stance += k * (-s.delta_cv * inp.foot_vel[i].xy().norm_squared()).exp();
    }
    swing /= NUM_LEGS as f64;
    stance /= NUM_LEGS as f64;

    let violations =
        (0..NUM_JOINTS).filter(|&j| inp.q[j] > inp.joint_upper[j] || inp.q[j] < inp.joint_lower[j]).count() as f64;
    let mut smooth1 = [0.0; NUM_JOINTS];
    let mut smooth2 = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        smooth1[j] = inp.prev_action[j] - inp.action[j];
        smooth2[j] = inp.prev_action_2[j] - 2.0 * inp.prev_action[j] + inp.action[j];
    }
    let g = inp.gravity_body;

    let pw = w.positive();
    let nw = w.negative();
    RewardBreakdown::compose(
        &[
            (DRIBBLE_TERMS[0], r_vel, pw[0]),
            (DRIBBLE_TERMS[1], r_dist, pw[1]),
            (DRIBBLE_TERMS[2], r_yaw, pw[2]),
            (DRIBBLE_TERMS[3], r_norm, pw[3]),
            (DRIBBLE_TERMS[4], r_angle, pw[4]),
            (DRIBBLE_TERMS[5], swing, pw[5]),
            (DRIBBLE_TERMS[6], stance, pw[6]),
        ],
        &[
            (DRIBBLE_TERMS[7], violations, nw[0]),
            (DRIBBLE_TERMS[8], norm_sq(&inp.tau), nw[1]),
            (DRIBBLE_TERMS[9], norm(&inp.qd), nw[2]),
            (DRIBBLE_TERMS[10], norm(&inp.qdd), nw[3]),
            (DRIBBLE_TERMS[11], inp.hip_thigh_collision as u8 as f64, nw[4]),
            (DRIBBLE_TERMS[12], g.x * g.x + g.y * g.y, nw[5]),
            (DRIBBLE_TERMS[13], norm_sq(&smooth1), nw[6]),
            (DRIBBLE_TERMS[14], norm_sq(&smooth2), nw[7]),
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryInputs {
    /// Vertical component of the body-frame gravity unit vector.
    pub g_z: f64,
    /// Base height above the ground beneath it.
    pub height: f64,
    pub height_target: f64,
    pub q: [f64; NUM_JOINTS],
    pub q_standing: [f64; NUM_JOINTS],
    /// Foot sole heights above the ground (clamped at zero).
    pub foot_heights: [f64; NUM_LEGS],
    pub action: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
}

impl RecoveryInputs {
    pub fn from_world(
        world: &WorldState,
        action: &[f64; NUM_JOINTS],
        constants: &RobotConstants,
        cfg: &RewardConfig,
    ) -> Self {
        let r = &world.robot;
        let ground = world.ground_height(r.base_position.x, r.base_position.y);
        let mut foot_heights = [0.0; NUM_LEGS];
        for (i, p) in r.foot_pos.iter().enumerate() {
            foot_heights[i] = (p.z - constants.foot_radius - world.ground_height(p.x, p.y)).max(0.0);
        }
        Self {
            g_z: r.gravity_body.z,
            height: r.base_position.z - ground,
            height_target: cfg.recovery_height_target.unwrap_or_else(|| constants.nominal_height()),
            q: r.q,
            q_standing: constants.stand_pose,
            foot_heights,
            action: *action,
            tau: r.tau,
        }
    }
}

pub fn recovery_reward(inp: &RecoveryInputs, cfg: &RewardConfig) -> RewardBreakdown {
    let w = &cfg.recovery;
    let gate = if inp.g_z < -0.6 { 1.0 } else { 0.0 };
    let orient = (0.5 - 0.5 * inp.g_z).powi(2);
    let rel = (inp.height_target - inp.height) / inp.height_target;
    let height = gate * (1.0 - (rel * rel).clamp(0.0, 1.0));
    let mut dq = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        dq[j] = inp.q[j] - inp.q_standing[j];
    }
    let pose = gate * (1.0 - (norm_sq(&dq) / 20.0).clamp(0.0, 1.0));
    let feet = gate * (-10.0 * norm_sq(&inp.foot_heights)).exp();
    RewardBreakdown::compose(
        &[
            (RECOVERY_TERMS[0], orient, w.orientation),
            (RECOVERY_TERMS[1], height, w.body_height),
            (RECOVERY_TERMS[2], pose, w.body_pose),
            (RECOVERY_TERMS[3], feet, w.foot_height),
        ],
        &[(RECOVERY_TERMS[4], norm_sq(&inp.action), w.action), (RECOVERY_TERMS[5], norm_sq(&inp.tau), w.joint_torque)],
    )
}
