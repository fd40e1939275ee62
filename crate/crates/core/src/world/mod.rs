//! Reduced-order quadruped and ball physics for one environment instance.
//!
//! The base is a single 6-DOF rigid body. Each leg is a massless
//! hip-abduction / thigh / calf chain whose joints follow decoupled
//! second-order dynamics (`I_j * qdd = tau_j`) driven by a PD loop; the feet
//! exert penalty contact forces on the base. The ball is a point mass with a
//! penalty ground contact, quadratic rolling drag and impulse contacts
//! against the feet and the base box.
//!
//! Frames: world is z-up. `base_lin_vel` is the world-frame velocity of the
//! base origin, `base_ang_vel` is expressed in the body frame.

mod actuator;
mod ball;
mod collision;
mod contact;
mod kinematics;
mod reset;
mod snapshot;
mod step;
mod terrain;

pub use actuator::{compute_joint_torques, lag_coefficient};
pub use ball::{ball_ground_forces, resting_height, BallForces};
pub use collision::{resolve_ball_robot_collision, BaseBody, ContactEvent, ContactSource};
pub use contact::{apparent_mass, ground_contact_force, ContactGains, PointContact};
pub use kinematics::{hip_origin, leg_forward_kinematics, thigh_midpoint, Leg};
pub use reset::{generate_fall_bank, reset_world, FallBank};
pub use snapshot::{decode_snapshot, encode_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use step::{step_world, StepSummary};
pub use terrain::Terrain;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{RobotConstants, NUM_JOINTS, NUM_LEGS};

/// Joint position targets for the twelve motors (rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub q_des: [f64; NUM_JOINTS],
}

impl Action {
    pub fn new(q_des: [f64; NUM_JOINTS]) -> Self {
        Self { q_des }
    }

    pub fn stand(robot: &RobotConstants) -> Self {
        Self { q_des: robot.stand_pose }
    }

    /// Targets clamped into the joint limits.
    pub fn clamped(&self, robot: &RobotConstants) -> Self {
        let mut q_des = self.q_des;
        for (j, q) in q_des.iter_mut().enumerate() {
            *q = q.clamp(robot.joint_lower[j], robot.joint_upper[j]);
        }
        Self { q_des }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_position: Vector3<f64>,
    pub base_orientation: UnitQuaternion<f64>,
    pub base_lin_vel: Vector3<f64>,
    pub base_ang_vel: Vector3<f64>,
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub qdd: [f64; NUM_JOINTS],
    pub tau: [f64; NUM_JOINTS],
    pub foot_contact: [bool; NUM_LEGS],
    pub gravity_body: Vector3<f64>,
    pub yaw_global: f64,
    /// Foot centres, world frame.
    pub foot_pos: [Vector3<f64>; NUM_LEGS],
    /// Foot velocities, world frame.
    pub foot_vel: [Vector3<f64>; NUM_LEGS],
    /// Ground reaction on each foot, world frame.
    pub foot_force: [Vector3<f64>; NUM_LEGS],
    pub hip_thigh_collision: bool,
    /// Stick-friction anchors for the feet and the eight base-box corners.
    pub foot_anchor: [Option<Vector3<f64>>; NUM_LEGS],
    pub corner_anchor: [Option<Vector3<f64>>; 8],
}

impl RobotState {
    /// Standing at the origin with zero yaw, legs in the nominal pose.
    pub fn standing(robot: &RobotConstants, height: f64) -> Self {
        let mut s = Self {
            base_position: Vector3::new(0.0, 0.0, height),
            base_orientation: UnitQuaternion::identity(),
            base_lin_vel: Vector3::zeros(),
            base_ang_vel: Vector3::zeros(),
            q: robot.stand_pose,
            qd: [0.0; NUM_JOINTS],
            qdd: [0.0; NUM_JOINTS],
            tau: [0.0; NUM_JOINTS],
            foot_contact: [false; NUM_LEGS],
            gravity_body: Vector3::new(0.0, 0.0, -1.0),
            yaw_global: 0.0,
            foot_pos: [Vector3::zeros(); NUM_LEGS],
            foot_vel: [Vector3::zeros(); NUM_LEGS],
            foot_force: [Vector3::zeros(); NUM_LEGS],
            hip_thigh_collision: false,
            foot_anchor: [None; NUM_LEGS],
            corner_anchor: [None; 8],
        };
        s.refresh_derived(robot);
        s
    }

    /// Recomputes gravity direction, yaw and world foot positions.
    pub fn refresh_derived(&mut self, robot: &RobotConstants) {
        self.gravity_body = self.base_orientation.inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0));
        self.yaw_global = yaw_of(&self.base_orientation);
        for leg in Leg::ALL {
            let p = leg_forward_kinematics(self.leg_angles(leg), leg, robot);
            self.foot_pos[leg as usize] = self.base_position + self.base_orientation * p;
        }
    }

    pub fn leg_angles(&self, leg: Leg) -> [f64; 3] {
        let i = leg as usize * 3;
        [self.q[i], self.q[i + 1], self.q[i + 2]]
    }

    /// Roll and pitch (ZYX Euler convention).
    pub fn roll_pitch(&self) -> (f64, f64) {
        let (roll, pitch, _) = self.base_orientation.euler_angles();
        (roll, pitch)
    }

    /// Base linear velocity in the body frame.
    pub fn body_lin_vel(&self) -> Vector3<f64> {
        self.base_orientation.inverse_transform_vector(&self.base_lin_vel)
    }
}

/// Heading of a body orientation about the world z axis.
pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub radius: f64,
    pub mass: f64,
    pub drag_coeff: f64,
}

impl BallState {
    pub fn at_rest(x: f64, y: f64, radius: f64, mass: f64, drag_coeff: f64) -> Self {
        Self { position: Vector3::new(x, y, radius), velocity: Vector3::zeros(), radius, mass, drag_coeff }
    }

    pub fn horizontal_speed(&self) -> f64 {
        self.velocity.x.hypot(self.velocity.y)
    }
}

/// Full simulation truth for one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: RobotState,
    pub ball: BallState,
    pub terrain: Terrain,
    /// Gravity acceleration vector, world frame (m/s^2).
    pub gravity: Vector3<f64>,
    pub time: f64,
    pub substep: u64,
}

impl WorldState {
    /// Ball position relative to the base, body frame.
    pub fn ball_in_body(&self) -> Vector3<f64> {
        self.robot.base_orientation.inverse_transform_vector(&(self.ball.position - self.robot.base_position))
    }

    pub fn ground_height(&self, x: f64, y: f64) -> f64 {
        self.terrain.height(x, y)
    }
}
