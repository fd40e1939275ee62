use nalgebra::Vector3;

use crate::config::SimParams;

/// Result of one penalty contact evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointContact {
    pub force: Vector3<f64>,
    pub penetration: f64,
}

impl PointContact {
    pub fn none() -> Self {
        Self { force: Vector3::zeros(), penetration: 0.0 }
    }

    pub fn in_contact(&self) -> bool {
        self.penetration > 0.0
    }
}

/// Damping ratio of a linear spring-damper whose bounce has coefficient of
/// restitution `e`, floored at `min_ratio`.
pub fn damping_ratio_for_restitution(e: f64, min_ratio: f64) -> f64 {
    let zeta = if e <= 0.0 {
        1.0
    } else if e >= 1.0 {
        0.0
    } else {
        let l = -e.ln();
        l / (std::f64::consts::PI.powi(2) + l * l).sqrt()
    };
    zeta.max(min_ratio)
}

/// Normal damping (N s/m) for robot contact points.
pub fn robot_contact_damping(restitution: f64, params: &SimParams) -> f64 {
    let zeta = damping_ratio_for_restitution(restitution, params.min_damping_ratio);
    2.0 * zeta * (params.ground_stiffness * params.contact_effective_mass).sqrt()
}

/// Penalty gains for one contact point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactGains {
    pub stiffness: f64,
    pub damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
}

/// Largest `k dt^2 / m` a single contact may reach.
const MAX_STIFFNESS_RATIO: f64 = 0.5;
/// Largest `c dt / m` a single contact may reach.
const MAX_DAMPING_RATIO: f64 = 0.8;

impl ContactGains {
    pub fn new(damping: f64, params: &SimParams) -> Self {
        Self {
            stiffness: params.ground_stiffness,
            damping,
            tangential_stiffness: params.tangential_stiffness,
            tangential_damping: params.tangential_damping,
        }
    }

    /// Caps the gains so the explicit update stays stable for a point whose
    /// apparent mass is `normal_mass` along the normal and `tangent_mass`
    /// in the ground plane. Points far from the base COM see a small
    /// apparent mass because the legs are massless.
    pub fn limited(self, normal_mass: f64, tangent_mass: f64, dt: f64) -> Self {
        let k_cap = |m: f64| MAX_STIFFNESS_RATIO * m / (dt * dt);
        let c_cap = |m: f64| MAX_DAMPING_RATIO * m / dt;
        Self {
            stiffness: self.stiffness.min(k_cap(normal_mass)),
            damping: self.damping.min(c_cap(normal_mass)),
            tangential_stiffness: self.tangential_stiffness.min(k_cap(tangent_mass)),
            tangential_damping: self.tangential_damping.min(c_cap(tangent_mass)),
        }
    }
}

/// Apparent mass of a rigid body at `lever` from its COM along unit `dir`.
pub fn apparent_mass(
    inv_mass: f64,
    inv_inertia_world: &nalgebra::Matrix3<f64>,
    lever: &Vector3<f64>,
    dir: &Vector3<f64>,
) -> f64 {
    let rn = lever.cross(dir);
    1.0 / (inv_mass + rn.dot(&(inv_inertia_world * rn)))
}

/// Spring-damper normal force plus stick-spring Coulomb friction for a
/// sphere of `radius` centred at `point` moving at `vel`.
///
/// The tangential anchor is created on touchdown, dragged along while the
/// contact slides (so the spring force stays on the friction cone) and
/// cleared on lift-off.
pub fn ground_contact_force(
    point: Vector3<f64>,
    vel: Vector3<f64>,
    radius: f64,
    anchor: &mut Option<Vector3<f64>>,
    ground_height: f64,
    friction: f64,
    gains: &ContactGains,
) -> PointContact {
    let penetration = radius + ground_height - point.z;
    if penetration <= 0.0 {
        *anchor = None;
        return PointContact::none();
    }
    let normal = (gains.stiffness * penetration - gains.damping * vel.z).max(0.0);
    let a = anchor.get_or_insert(Vector3::new(point.x, point.y, 0.0));
    let dx = point.x - a.x;
    let dy = point.y - a.y;
    let mut fx = -gains.tangential_stiffness * dx - gains.tangential_damping * vel.x;
    let mut fy = -gains.tangential_stiffness * dy - gains.tangential_damping * vel.y;
    let limit = friction * normal;
    let mag = fx.hypot(fy);
    if mag > limit {
        let s = if mag > 0.0 { limit / mag } else { 0.0 };
        fx *= s;
        fy *= s;
        // Slide the anchor so the spring alone carries the cone force.
        a.x = point.x + fx / gains.tangential_stiffness;
        a.y = point.y + fy / gains.tangential_stiffness;
    }
    PointContact { force: Vector3::new(fx, fy, normal), penetration }
}


#[cfg(test)]
mod gain_tests {
    use super::*;

    #[test]
    fn heavy_points_keep_nominal_gains() {
        let p = SimParams::default();
        let g = ContactGains::new(300.0, &p);
        assert_eq!(g.limited(1e3, 1e3, p.physics_dt), g);
    }

    #[test]
    fn light_points_are_capped() {
        let p = SimParams::default();
        let g = ContactGains::new(300.0, &p).limited(0.5, 0.5, p.physics_dt);
        assert!(g.stiffness * p.physics_dt.powi(2) / 0.5 <= MAX_STIFFNESS_RATIO + 1e-12);
        assert!(g.damping * p.physics_dt / 0.5 <= MAX_DAMPING_RATIO + 1e-12);
    }

    #[test]
    fn apparent_mass_of_point_at_com_is_body_mass() {
        let inv_i = nalgebra::Matrix3::identity() * 4.0;
        let m = apparent_mass(1.0 / 12.0, &inv_i, &Vector3::zeros(), &Vector3::z());
        assert!((m - 12.0).abs() < 1e-12);
        // Lever perpendicular to the direction adds r^2 / I.
        let m = apparent_mass(1.0 / 12.0, &inv_i, &Vector3::new(0.5, 0.0, 0.0), &Vector3::z());
        assert!((1.0 / m - (1.0 / 12.0 + 0.25 * 4.0)).abs() < 1e-12);
    }
}
