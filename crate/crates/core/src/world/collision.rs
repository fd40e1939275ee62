use nalgebra::{Matrix3, Vector3};

use crate::config::RobotConstants;

use super::{BallState, Leg, RobotState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContactSource {
    Foot(Leg),
    Base,
}

/// One resolved ball-robot contact. `ball_impulse + base_impulse == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactEvent {
    pub source: ContactSource,
    /// Contact point on the robot, world frame.
    pub point: Vector3<f64>,
    /// Unit normal from the robot toward the ball centre.
    pub normal: Vector3<f64>,
    pub ball_impulse: Vector3<f64>,
    pub base_impulse: Vector3<f64>,
}

/// Rigid-body properties of the base used to absorb contact reactions.
#[derive(Debug, Clone, Copy)]
pub struct BaseBody {
    pub mass: f64,
    pub inertia: Matrix3<f64>,
    /// COM offset from the base origin, body frame.
    pub com: Vector3<f64>,
}

struct Candidate {
    source: ContactSource,
    point: Vector3<f64>,
    normal: Vector3<f64>,
    penetration: f64,
    point_vel: Vector3<f64>,
}

fn base_point_velocity(robot: &RobotState, body_point: &Vector3<f64>) -> Vector3<f64> {
    robot.base_lin_vel + robot.base_orientation * robot.base_ang_vel.cross(body_point)
}

fn base_candidate(robot: &RobotState, ball: &BallState, half: &[f64; 3]) -> Option<Candidate> {
    let rot = robot.base_orientation;
    let c = rot.inverse_transform_vector(&(ball.position - robot.base_position));
    let closest =
        Vector3::new(c.x.clamp(-half[0], half[0]), c.y.clamp(-half[1], half[1]), c.z.clamp(-half[2], half[2]));
    let d = c - closest;
    let dist = d.norm();
    let (normal_body, penetration) = if dist > 1e-12 {
        (d / dist, ball.radius - dist)
    } else {
        // Centre inside the box: push out along the shallowest face.
        let mut best = 0;
        let mut depth = f64::MAX;
        for i in 0..3 {
            let di = half[i] - c[i].abs();
            if di < depth {
                depth = di;
                best = i;
            }
        }
        let mut n = Vector3::zeros();
        n[best] = if c[best] >= 0.0 { 1.0 } else { -1.0 };
        (n, ball.radius + depth)
    };
    if penetration <= 0.0 {
        return None;
    }
    Some(Candidate {
        source: ContactSource::Base,
        point: robot.base_position + rot * closest,
        normal: rot * normal_body,
        penetration,
        point_vel: base_point_velocity(robot, &closest),
    })
}

fn foot_candidate(robot: &RobotState, ball: &BallState, leg: Leg, foot_radius: f64) -> Option<Candidate> {
    let i = leg as usize;
    let d = ball.position - robot.foot_pos[i];
    let dist = d.norm();
    let penetration = ball.radius + foot_radius - dist;
    if penetration <= 0.0 || dist < 1e-12 {
        return None;
    }
    let normal = d / dist;
    Some(Candidate {
        source: ContactSource::Foot(leg),
        point: robot.foot_pos[i] + normal * foot_radius,
        normal,
        penetration,
        point_vel: robot.foot_vel[i],
    })
}

/// Resolves contacts between the ball and the four feet plus the base box.
///
/// Each approaching contact receives the two-body normal impulse
/// `j = -(1 + e) v_n / (1/m_ball + 1/m_base)` and a Coulomb-bounded
/// tangential impulse. The equal and opposite impulse is applied to the
/// base at the contact point. Overlap is removed by moving the ball.
pub fn resolve_ball_robot_collision(
    robot: &mut RobotState,
    ball: &mut BallState,
    constants: &RobotConstants,
    base: &BaseBody,
    restitution: f64,
    friction: f64,
) -> Vec<ContactEvent> {
    let mut events = Vec::new();
    let mut candidates: Vec<Candidate> =
        Leg::ALL.iter().filter_map(|&leg| foot_candidate(robot, ball, leg, constants.foot_radius)).collect();
    candidates.extend(base_candidate(robot, ball, &constants.base_half_extents));
    if candidates.is_empty() {
        return events;
    }
    let inv_inertia = base.inertia.try_inverse().unwrap_or_else(Matrix3::zeros);
    let inv_mass_sum = 1.0 / ball.mass + 1.0 / base.mass;
    for cand in candidates {
        ball.position += cand.normal * cand.penetration;
        let rel = ball.velocity - cand.point_vel;
        let vn = rel.dot(&cand.normal);
        if vn >= 0.0 {
            continue;
        }
        let jn = -(1.0 + restitution) * vn / inv_mass_sum;
        let vt = rel - cand.normal * vn;
        let vt_norm = vt.norm();
        let mut impulse = cand.normal * jn;
        if vt_norm > 1e-12 {
            let jt = (friction * jn).min(vt_norm / inv_mass_sum);
            impulse -= vt * (jt / vt_norm);
        }
        ball.velocity += impulse / ball.mass;

        let reaction = -impulse;
        let rot = robot.base_orientation;
        let com_world = robot.base_position + rot * base.com;
        let lever_body = rot.inverse_transform_vector(&(cand.point - com_world));
        let dv_com = reaction / base.mass;
        let dw = inv_inertia * lever_body.cross(&rot.inverse_transform_vector(&reaction));
        robot.base_ang_vel += dw;
        robot.base_lin_vel += dv_com - rot * dw.cross(&base.com);

        events.push(ContactEvent {
            source: cand.source,
            point: cand.point,
            normal: cand.normal,
            ball_impulse: impulse,
            base_impulse: reaction,
        });
    }
    events
}
