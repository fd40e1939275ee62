use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use crate::config::{SimParams, NUM_JOINTS, NUM_LEGS};
use crate::error::SimError;
use crate::randomization::EpisodeDynamics;

use super::ball::integrate_ball;
use super::collision::BaseBody;
use super::contact::{apparent_mass, robot_contact_damping, ContactGains};
use super::{
    compute_joint_torques, ground_contact_force, hip_origin, leg_forward_kinematics, resolve_ball_robot_collision,
    thigh_midpoint, Action, Leg, RobotState, WorldState,
};

/// Aggregate information about one control step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepSummary {
    pub ball_contacts: usize,
    pub ball_impulse: f64,
}

pub(crate) fn base_body(params: &SimParams, dynamics: &EpisodeDynamics) -> BaseBody {
    let r = &params.robot;
    BaseBody {
        mass: (r.base_mass + dynamics.payload_mass).max(1.0),
        inertia: Matrix3::from_diagonal(&Vector3::from(r.base_inertia)),
        com: Vector3::from(dynamics.com_displacement),
    }
}

fn corners(half: &[f64; 3]) -> [Vector3<f64>; 8] {
    let mut out = [Vector3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let sx = if i & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if i & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if i & 4 == 0 { -1.0 } else { 1.0 };
        *c = Vector3::new(sx * half[0], sy * half[1], sz * half[2]);
    }
    out
}

fn leg_q(q: &[f64; NUM_JOINTS], leg: Leg) -> [f64; 3] {
    let i = leg as usize * 3;
    [q[i], q[i + 1], q[i + 2]]
}

/// Advances the world by one control step (`substeps_per_control` physics
/// substeps). `targets` holds the joint targets in effect for each substep
/// after the action delay; a single entry is reused for every substep.
pub fn step_world(
    world: &mut WorldState,
    targets: &[Action],
    dynamics: &EpisodeDynamics,
    params: &SimParams,
) -> Result<StepSummary, SimError> {
    assert!(!targets.is_empty(), "step_world needs at least one target");
    let dt = params.physics_dt;
    let consts = &params.robot;
    let body = base_body(params, dynamics);
    let inertia_inv = body.inertia.try_inverse().expect("positive inertia");
    let nominal = ContactGains::new(robot_contact_damping(dynamics.restitution, params), params);
    let inv_mass = 1.0 / body.mass;
    let box_corners = corners(&consts.base_half_extents);
    let mut summary = StepSummary::default();
    let mut collided = false;

    for k in 0..params.substeps_per_control {
        let target = &targets[k.min(targets.len() - 1)];
        let robot = &mut world.robot;

        // Joint dynamics.
        let q_old = robot.q;
        let tau = compute_joint_torques(target, robot, dynamics, consts, dt);
        for j in 0..NUM_JOINTS {
            let qdd = tau[j] / consts.reflected_inertia[j % 3];
            robot.qdd[j] = qdd;
            robot.qd[j] += qdd * dt;
            robot.q[j] += robot.qd[j] * dt;
        }
        robot.tau = tau;

        let rot = robot.base_orientation;
        let com_world = robot.base_position + rot * body.com;
        let mut force = world.gravity * body.mass;
        let mut torque_body = Vector3::zeros();
        let mut foot_body = [Vector3::zeros(); NUM_LEGS];
        let mut foot_rel_vel = [Vector3::zeros(); NUM_LEGS];
        let inv_inertia_world = rot.to_rotation_matrix() * inertia_inv * rot.to_rotation_matrix().transpose();
        let gains_at = |body_point: &Vector3<f64>| {
            let lever = rot * (body_point - body.com);
            let m_n = apparent_mass(inv_mass, &inv_inertia_world, &lever, &Vector3::z());
            let m_t = apparent_mass(inv_mass, &inv_inertia_world, &lever, &Vector3::x()).min(apparent_mass(
                inv_mass,
                &inv_inertia_world,
                &lever,
                &Vector3::y(),
            ));
            nominal.limited(m_n, m_t, dt)
        };

        for leg in Leg::ALL {
            let i = leg as usize;
            let p_new = leg_forward_kinematics(leg_q(&robot.q, leg), leg, consts);
            let p_old = leg_forward_kinematics(leg_q(&q_old, leg), leg, consts);
            foot_body[i] = p_new;
            foot_rel_vel[i] = (p_new - p_old) / dt;
            let pos = robot.base_position + rot * p_new;
            let vel = robot.base_lin_vel + rot * (robot.base_ang_vel.cross(&p_new) + foot_rel_vel[i]);
            let h = world.terrain.height(pos.x, pos.y);
            let c = ground_contact_force(
                pos,
                vel,
                consts.foot_radius,
                &mut robot.foot_anchor[i],
                h,
                dynamics.friction,
                &gains_at(&p_new),
            );
            robot.foot_force[i] = c.force;
            robot.foot_contact[i] = c.in_contact();
            force += c.force;
            torque_body += (p_new - body.com).cross(&rot.inverse_transform_vector(&c.force));
        }

        for (ci, corner) in box_corners.iter().enumerate() {
            let pos = robot.base_position + rot * corner;
            let h = world.terrain.height(pos.x, pos.y);
            if pos.z > h + 0.05 && robot.corner_anchor[ci].is_none() {
                continue;
            }
            let vel = robot.base_lin_vel + rot * robot.base_ang_vel.cross(corner);
            let c = ground_contact_force(
                pos,
                vel,
                0.0,
                &mut robot.corner_anchor[ci],
                h,
                dynamics.friction,
                &gains_at(corner),
            );
            force += c.force;
            torque_body += (corner - body.com).cross(&rot.inverse_transform_vector(&c.force));
        }

        for leg in Leg::ALL {
            let hip = robot.base_position + rot * hip_origin(leg, consts);
            let mid = robot.base_position + rot * thigh_midpoint(leg_q(&robot.q, leg), leg, consts);
            if hip.z < world.terrain.height(hip.x, hip.y) || mid.z < world.terrain.height(mid.x, mid.y) {
                collided = true;
            }
        }

        // Base rigid body, integrated at the COM.
        let omega = robot.base_ang_vel;
        let inertia_omega = body.inertia * omega;
        let omega_dot = inertia_inv * (torque_body - omega.cross(&inertia_omega));
        let v_com = robot.base_lin_vel + rot * omega.cross(&body.com);
        let v_com_new = v_com + force * (dt / body.mass);
        let omega_new = omega + omega_dot * dt;
        let com_new = com_world + v_com_new * dt;
        let rot_new = rot * UnitQuaternion::from_scaled_axis(omega_new * dt);
        let rot_new = UnitQuaternion::new_normalize(rot_new.into_inner());
        robot.base_orientation = rot_new;
        robot.base_ang_vel = omega_new;
        robot.base_position = com_new - rot_new * body.com;
        robot.base_lin_vel = v_com_new - rot_new * omega_new.cross(&body.com);

        for leg in Leg::ALL {
            let i = leg as usize;
            robot.foot_pos[i] = robot.base_position + rot_new * foot_body[i];
            robot.foot_vel[i] =
                robot.base_lin_vel + rot_new * (robot.base_ang_vel.cross(&foot_body[i]) + foot_rel_vel[i]);
        }

        integrate_ball(&mut world.ball, &world.terrain, &world.gravity, params, dt);
        let events = resolve_ball_robot_collision(
            &mut world.robot,
            &mut world.ball,
            consts,
            &body,
            dynamics.restitution,
            params.ball_friction,
        );
        summary.ball_contacts += events.len();
        summary.ball_impulse += events.iter().map(|e| e.ball_impulse.norm()).sum::<f64>();

        world.substep += 1;
        world.time = world.substep as f64 * dt;
        check_finite(world)?;
    }

    world.robot.hip_thigh_collision = collided;
    refresh(&mut world.robot);
    Ok(summary)
}

fn refresh(robot: &mut RobotState) {
    robot.gravity_body = robot.base_orientation.inverse_transform_vector(&Vector3::new(0.0, 0.0, -1.0));
    robot.yaw_global = super::yaw_of(&robot.base_orientation);
}

fn check_finite(world: &WorldState) -> Result<(), SimError> {
    let r = &world.robot;
    let bad = |name: &str| Err(SimError::NonFiniteState { quantity: name.to_string(), time: world.time });
    if !r.base_position.iter().all(|v| v.is_finite()) {
        return bad("base_position");
    }
    if !r.base_orientation.coords.iter().all(|v| v.is_finite()) {
        return bad("base_orientation");
    }
    if !r.base_lin_vel.iter().all(|v| v.is_finite()) {
        return bad("base_lin_vel");
    }
    if !r.base_ang_vel.iter().all(|v| v.is_finite()) {
        return bad("base_ang_vel");
    }
    if !r.q.iter().chain(r.qd.iter()).all(|v| v.is_finite()) {
        return bad("joint_state");
    }
    if !world.ball.position.iter().chain(world.ball.velocity.iter()).all(|v| v.is_finite()) {
        return bad("ball");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskMode;
    use crate::world::ball::resting_height;
    use crate::world::{BallState, Terrain};

    fn standing_world(params: &SimParams) -> WorldState {
        let c = &params.robot;
        let sag = c.base_mass * params.gravity / (4.0 * params.ground_stiffness);
        let robot = RobotState::standing(c, c.nominal_height() - sag);
        let mut ball = BallState::at_rest(3.0, 1.0, params.ball_radius, 0.2, 0.5);
        ball.position.z = resting_height(params.ball_radius, 0.2, params.gravity, params);
        WorldState {
            robot,
            ball,
            terrain: Terrain::flat(),
            gravity: Vector3::new(0.0, 0.0, -params.gravity),
            time: 0.0,
            substep: 0,
        }
    }

    #[test]
    fn standing_robot_holds_height() {
        let p = SimParams::default();
        let d = EpisodeDynamics::nominal(TaskMode::Dribble);
        let mut w = standing_world(&p);
        let z0 = w.robot.base_position.z;
        let stand = Action::stand(&p.robot);
        for _ in 0..50 {
            step_world(&mut w, &[stand], &d, &p).unwrap();
            assert!((w.robot.base_position.z - z0).abs() < 1e-3);
        }
        assert!(w.robot.foot_contact.iter().all(|c| *c));
        assert!(!w.robot.hip_thigh_collision);
    }

    #[test]
    fn resting_ball_stays_at_rest() {
        let p = SimParams::default();
        let d = EpisodeDynamics::nominal(TaskMode::Dribble);
        let mut w = standing_world(&p);
        let start = w.ball.position;
        for _ in 0..100 {
            step_world(&mut w, &[Action::stand(&p.robot)], &d, &p).unwrap();
        }
        assert!((w.ball.position - start).norm() < 1e-9);
    }

    #[test]
    fn quaternion_stays_normalized_while_tumbling() {
        let p = SimParams::default();
        let d = EpisodeDynamics::nominal(TaskMode::Dribble);
        let mut w = standing_world(&p);
        w.robot.base_position.z = 5.0;
        w.robot.base_ang_vel = Vector3::new(3.0, -2.0, 5.0);
        for _ in 0..40 {
            step_world(&mut w, &[Action::stand(&p.robot)], &d, &p).unwrap();
            assert!((w.robot.base_orientation.coords.norm() - 1.0).abs() < 1e-9);
            assert!((w.robot.gravity_body.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let p = SimParams::default();
        let d = EpisodeDynamics::nominal(TaskMode::Dribble);
        let mut w = standing_world(&p);
        w.ball.velocity.x = f64::NAN;
        let err = step_world(&mut w, &[Action::stand(&p.robot)], &d, &p).unwrap_err();
        assert!(matches!(err, SimError::NonFiniteState { .. }));
    }
}
