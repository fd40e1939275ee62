use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::config::RobotConstants;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    FR = 0,
    FL = 1,
    RR = 2,
    RL = 3,
}

impl Leg {
    pub const ALL: [Leg; 4] = [Leg::FR, Leg::FL, Leg::RR, Leg::RL];

    pub fn from_index(i: usize) -> Leg {
        Self::ALL[i]
    }
}

/// Rotates `(y, z)` about the body x axis by `angle`.
fn abduct(angle: f64, v: Vector3<f64>) -> Vector3<f64> {
    let (s, c) = angle.sin_cos();
    Vector3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z)
}

/// Foot centre in the body frame for the leg's `[hip, thigh, calf]` angles.
///
/// Chain: hip joint at `hip_offsets[leg]`, rotation about x, lateral hip
/// link, thigh rotation about y, thigh link along -z, calf rotation about y,
/// calf link along -z. All-zero angles give a straight leg pointing down.
pub fn leg_forward_kinematics(q: [f64; 3], leg: Leg, robot: &RobotConstants) -> Vector3<f64> {
    let [h, t, c] = q;
    let side = RobotConstants::side(leg as usize);
    let lt = robot.thigh_link;
    let lc = robot.calf_link;
    let local =
        Vector3::new(-lt * t.sin() - lc * (t + c).sin(), side * robot.hip_link, -lt * t.cos() - lc * (t + c).cos());
    Vector3::from(robot.hip_offsets[leg as usize]) + abduct(h, local)
}

/// Hip joint origin in the body frame.
pub fn hip_origin(leg: Leg, robot: &RobotConstants) -> Vector3<f64> {
    Vector3::from(robot.hip_offsets[leg as usize])
}

/// Midpoint of the thigh link in the body frame.
pub fn thigh_midpoint(q: [f64; 3], leg: Leg, robot: &RobotConstants) -> Vector3<f64> {
    let [h, t, _] = q;
    let side = RobotConstants::side(leg as usize);
    let half = 0.5 * robot.thigh_link;
    let local = Vector3::new(-half * t.sin(), side * robot.hip_link, -half * t.cos());
    Vector3::from(robot.hip_offsets[leg as usize]) + abduct(h, local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::Matrix4;
    use rand::Rng;

    fn translation(x: f64, y: f64, z: f64) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m[(0, 3)] = x;
        m[(1, 3)] = y;
        m[(2, 3)] = z;
        m
    }

    fn rot_x(a: f64) -> Matrix4<f64> {
        let (s, c) = a.sin_cos();
        Matrix4::new(1.0, 0.0, 0.0, 0.0, 0.0, c, -s, 0.0, 0.0, s, c, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    fn rot_y(a: f64) -> Matrix4<f64> {
        let (s, c) = a.sin_cos();
        Matrix4::new(c, 0.0, s, 0.0, 0.0, 1.0, 0.0, 0.0, -s, 0.0, c, 0.0, 0.0, 0.0, 0.0, 1.0)
    }

    /// Homogeneous-transform chain composed link by link.
    fn oracle(q: [f64; 3], leg: Leg, r: &RobotConstants) -> Vector3<f64> {
        let hip = r.hip_offsets[leg as usize];
        let side = RobotConstants::side(leg as usize);
        let t = translation(hip[0], hip[1], hip[2])
            * rot_x(q[0])
            * translation(0.0, side * r.hip_link, 0.0)
            * rot_y(q[1])
            * translation(0.0, 0.0, -r.thigh_link)
            * rot_y(q[2])
            * translation(0.0, 0.0, -r.calf_link);
        Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)])
    }

    #[test]
    fn stand_pose_puts_foot_below_hip() {
        let r = RobotConstants::default();
        for leg in Leg::ALL {
            let i = leg as usize * 3;
            let q = [r.stand_pose[i], r.stand_pose[i + 1], r.stand_pose[i + 2]];
            let p = leg_forward_kinematics(q, leg, &r);
            let hip = hip_origin(leg, &r);
            assert!((p.x - hip.x).abs() < 1e-12);
            assert!((p.y - (hip.y + RobotConstants::side(leg as usize) * r.hip_link)).abs() < 1e-12);
            assert!((hip.z - p.z - r.stand_leg_height()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_angles_fully_extend_leg() {
        let r = RobotConstants::default();
        for leg in Leg::ALL {
            let p = leg_forward_kinematics([0.0; 3], leg, &r);
            let hip = hip_origin(leg, &r);
            let below = hip + Vector3::new(0.0, RobotConstants::side(leg as usize) * r.hip_link, 0.0);
            assert!(((p - below).norm() - (r.thigh_link + r.calf_link)).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_homogeneous_transform_oracle() {
        let r = RobotConstants::default();
        let mut rng = rng::stream(11, 0);
        for _ in 0..2000 {
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..4.0), rng.random_range(-2.8..-0.8)];
            for leg in Leg::ALL {
                let err = (leg_forward_kinematics(q, leg, &r) - oracle(q, leg, &r)).norm();
                assert!(err < 1e-9, "error {err}");
            }
        }
    }

    #[test]
    fn thigh_midpoint_is_halfway_to_knee() {
        let r = RobotConstants::default();
        let q = [0.3, 0.9, -1.4];
        let mid = thigh_midpoint(q, Leg::FL, &r);
        let mut short = r.clone();
        short.calf_link = 0.0;
        let knee = leg_forward_kinematics(q, Leg::FL, &short);
        let base = hip_origin(Leg::FL, &r) + abduct(0.3, Vector3::new(0.0, r.hip_link, 0.0));
        assert!((mid - 0.5 * (knee + base)).norm() < 1e-12);
    }
}
