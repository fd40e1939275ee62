use nalgebra::Vector3;

use crate::config::SimParams;

use super::{BallState, Terrain};

/// External forces on the ball, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallForces {
    pub gravity: Vector3<f64>,
    pub normal: Vector3<f64>,
    /// Quadratic terrain drag, horizontal only.
    pub drag: Vector3<f64>,
    pub in_contact: bool,
}

impl BallForces {
    pub fn total(&self) -> Vector3<f64> {
        self.gravity + self.normal + self.drag
    }
}

/// Gravity, penalty ground normal and rolling drag `F_D = C_D |v_xy|^2`
/// opposing the horizontal velocity. Drag and normal vanish while airborne.
pub fn ball_ground_forces(
    ball: &BallState,
    ground_height: f64,
    gravity: &Vector3<f64>,
    params: &SimParams,
) -> BallForces {
    let gravity_force = gravity * ball.mass;
    let penetration = ball.radius + ground_height - ball.position.z;
    if penetration <= 0.0 {
        return BallForces {
            gravity: gravity_force,
            normal: Vector3::zeros(),
            drag: Vector3::zeros(),
            in_contact: false,
        };
    }
    let damping = 2.0 * params.ball_damping_ratio * (params.ball_stiffness * ball.mass).sqrt();
    let normal = (params.ball_stiffness * penetration - damping * ball.velocity.z).max(0.0);
    let speed = ball.horizontal_speed();
    let drag =
        Vector3::new(-ball.drag_coeff * speed * ball.velocity.x, -ball.drag_coeff * speed * ball.velocity.y, 0.0);
    BallForces { gravity: gravity_force, normal: Vector3::new(0.0, 0.0, normal), drag, in_contact: true }
}

/// Resting height of the ball centre on flat ground.
pub fn resting_height(radius: f64, mass: f64, g: f64, params: &SimParams) -> f64 {
    radius - mass * g / params.ball_stiffness
}

/// One semi-implicit Euler substep. Drag is integrated implicitly in the
/// speed, `v' = v / (1 + dt C_D |v| / m)`, which is the exact solution of
/// `m dv/dt = -C_D |v| v` over the substep.
pub(crate) fn integrate_ball(
    ball: &mut BallState,
    terrain: &Terrain,
    gravity: &Vector3<f64>,
    params: &SimParams,
    dt: f64,
) -> BallForces {
    let h = terrain.height(ball.position.x, ball.position.y);
    let f = ball_ground_forces(ball, h, gravity, params);
    let inv_m = 1.0 / ball.mass;
    let explicit = f.gravity + f.normal;
    let mut v = ball.velocity + explicit * (dt * inv_m);
    if f.in_contact {
        let denom = 1.0 + dt * ball.drag_coeff * ball.horizontal_speed() * inv_m;
        v.x /= denom;
        v.y /= denom;
    }
    ball.velocity = v;
    ball.position += v * dt;
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rolling(vx: f64, vy: f64, cd: f64, mass: f64) -> BallState {
        let p = SimParams::default();
        let mut b = BallState::at_rest(0.0, 0.0, 0.09, mass, cd);
        b.position.z = resting_height(0.09, mass, 9.81, &p);
        b.velocity = Vector3::new(vx, vy, 0.0);
        b
    }

    #[test]
    fn drag_matches_quadratic_law() {
        let p = SimParams::default();
        let b = rolling(2.0, 0.0, 1.5, 0.2);
        let f = ball_ground_forces(&b, 0.0, &Vector3::new(0.0, 0.0, -9.81), &p);
        assert!((f.drag - Vector3::new(-6.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn zero_velocity_zero_drag() {
        let p = SimParams::default();
        let b = rolling(0.0, 0.0, 1.5, 0.2);
        let f = ball_ground_forces(&b, 0.0, &Vector3::new(0.0, 0.0, -9.81), &p);
        assert_eq!(f.drag, Vector3::zeros());
    }

    #[test]
    fn airborne_ball_feels_gravity_only() {
        let p = SimParams::default();
        let mut b = rolling(2.0, 1.0, 1.5, 0.2);
        b.position.z = 1.0;
        let f = ball_ground_forces(&b, 0.0, &Vector3::new(0.0, 0.0, -9.81), &p);
        assert!(!f.in_contact);
        assert_eq!(f.drag, Vector3::zeros());
        assert!((f.total() - Vector3::new(0.0, 0.0, -9.81 * 0.2)).norm() < 1e-12);
    }

    #[test]
    fn free_rolling_decay_matches_closed_form() {
        let p = SimParams::default();
        let g = Vector3::new(0.0, 0.0, -9.81);
        let (v0, m, cd) = (2.0, 0.2, 0.5);
        let mut b = rolling(v0, 0.0, cd, m);
        for _ in 0..400 {
            integrate_ball(&mut b, &Terrain::flat(), &g, &p, 0.005);
        }
        let exact = v0 / (1.0 + (cd / m) * v0 * 2.0);
        assert!((b.horizontal_speed() - exact).abs() / exact < 0.01);
    }
}
