use crate::config::{RobotConstants, NUM_JOINTS};
use crate::randomization::EpisodeDynamics;

use super::{Action, RobotState};

/// Discrete first-order lag coefficient for time constant `tau_s`.
/// A zero time constant disables the lag.
pub fn lag_coefficient(tau_s: f64, dt: f64) -> f64 {
    if tau_s <= 0.0 {
        1.0
    } else {
        1.0 - (-dt / tau_s).exp()
    }
}

/// PD torques with motor strength, calibration offset and saturation, then
/// filtered through the first-order actuator lag starting from the
/// torques currently stored in `robot.tau`.
pub fn compute_joint_torques(
    q_des: &Action,
    robot: &RobotState,
    dynamics: &EpisodeDynamics,
    constants: &RobotConstants,
    dt: f64,
) -> [f64; NUM_JOINTS] {
    let target = q_des.clamped(constants);
    let alpha = lag_coefficient(dynamics.actuator_lag, dt);
    let mut tau = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        let err = target.q_des[j] + dynamics.joint_calibration[j] - robot.q[j];
        let raw = dynamics.motor_strength[j] * (constants.kp * err - constants.kd * robot.qd[j]);
        let sat = raw.clamp(-constants.torque_limit, constants.torque_limit);
        tau[j] = robot.tau[j] + alpha * (sat - robot.tau[j]);
    }
    tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskMode;

    fn setup() -> (RobotConstants, RobotState, EpisodeDynamics) {
        let c = RobotConstants::default();
        let s = RobotState::standing(&c, c.nominal_height());
        (c, s, EpisodeDynamics::nominal(TaskMode::Dribble))
    }

    #[test]
    fn zero_torque_at_setpoint() {
        let (c, s, d) = setup();
        let tau = compute_joint_torques(&Action::new(s.q), &s, &d, &c, 0.005);
        assert!(tau.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn proportional_term_matches_gain() {
        let (c, s, d) = setup();
        let mut target = s.q;
        target[1] += 0.1;
        let tau = compute_joint_torques(&Action::new(target), &s, &d, &c, 0.005);
        assert!((tau[1] - 2.0).abs() < 1e-12);
        assert_eq!(tau[0], 0.0);
    }

    #[test]
    fn saturates_at_torque_limit() {
        let (c, mut s, d) = setup();
        s.qd[4] = 100.0;
        let tau = compute_joint_torques(&Action::new(s.q), &s, &d, &c, 0.005);
        assert_eq!(tau[4], -c.torque_limit);
    }

    #[test]
    fn lag_filters_step_response() {
        let (c, s, mut d) = setup();
        d.actuator_lag = 0.02;
        let mut target = s.q;
        target[1] += 0.1;
        let tau = compute_joint_torques(&Action::new(target), &s, &d, &c, 0.005);
        let alpha = 1.0 - (-0.25f64).exp();
        assert!((tau[1] - 2.0 * alpha).abs() < 1e-12);
    }

    #[test]
    fn strength_and_calibration_apply() {
        let (c, s, mut d) = setup();
        d.motor_strength[2] = 1.1;
        d.joint_calibration[2] = 0.01;
        let tau = compute_joint_torques(&Action::new(s.q), &s, &d, &c, 0.005);
        assert!((tau[2] - 1.1 * 20.0 * 0.01).abs() < 1e-12);
    }
}
