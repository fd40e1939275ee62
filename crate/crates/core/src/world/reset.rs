//! Episode resets and the recovery fall bank.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::Rng;

use crate::config::{EnvConfig, SimParams, TaskMode, NUM_JOINTS};
use crate::error::SimError;
use crate::randomization::EpisodeDynamics;
use crate::rng::{self, SimRng};

use super::ball::resting_height;
use super::snapshot::{read_robot, write_robot, Reader, Writer};
use super::step::base_body;
use super::{step_world, Action, BallState, RobotState, Terrain, WorldState};

pub const FALL_BANK_MAGIC: [u8; 4] = *b"FBNK";
pub const FALL_BANK_VERSION: u16 = 1;

/// Settled post-fall robot states used as recovery initial conditions.
/// Entries sit at the origin with zero velocity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FallBank {
    pub states: Vec<RobotState>,
}

impl FallBank {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// `FBNK`, version u16, count u32, then one robot record per entry in
    /// the world snapshot robot encoding.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(&FALL_BANK_MAGIC);
        w.u16(FALL_BANK_VERSION);
        w.u32(self.states.len() as u32);
        for s in &self.states {
            write_robot(&mut w, s);
        }
        w.buf
    }

    pub fn decode(data: &[u8]) -> Result<Self, SimError> {
        let mut r = Reader::new(data);
        if r.take(4)? != FALL_BANK_MAGIC {
            return Err(SimError::Snapshot("bad magic, expected FBNK".into()));
        }
        let version = r.u16()?;
        if version != FALL_BANK_VERSION {
            return Err(SimError::Snapshot(format!("unsupported fall bank version {version}")));
        }
        let n = r.u32()? as usize;
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            states.push(read_robot(&mut r)?);
        }
        if !r.finished() {
            return Err(SimError::Snapshot("trailing bytes after fall bank".into()));
        }
        Ok(Self { states })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.encode())
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let data = std::fs::read(path)?;
        Self::decode(&data).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn random_orientation(rng: &mut SimRng) -> UnitQuaternion<f64> {
    // Normalized Gaussian 4-vector is uniform on SO(3).
    loop {
        let q = Quaternion::new(rng::normal(rng), rng::normal(rng), rng::normal(rng), rng::normal(rng));
        if q.norm() > 1e-6 {
            return UnitQuaternion::from_quaternion(q);
        }
    }
}

const DROP_HEIGHT: f64 = 0.6;
const SETTLE_STEPS: usize = 100;
const MAX_SETTLE_STEPS: usize = 400;

/// Drops the robot `count` times from random orientations and joint
/// configurations and records the settled states. Drop `i` uses RNG stream
/// `i` of `seed`, so the bank is reproducible and order independent.
pub fn generate_fall_bank(count: usize, seed: u64, params: &SimParams) -> Result<FallBank, SimError> {
    let c = &params.robot;
    let dynamics = EpisodeDynamics::nominal(TaskMode::Recovery);
    let mut states = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng::stream(seed, i as u64);
        let mut robot = RobotState::standing(c, DROP_HEIGHT);
        robot.base_orientation = random_orientation(&mut rng);
        let mut target = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            robot.q[j] = rng::uniform(&mut rng, c.joint_lower[j], c.joint_upper[j]);
            target[j] = rng::uniform(&mut rng, c.joint_lower[j], c.joint_upper[j]);
        }
        for k in 0..3 {
            robot.base_ang_vel[k] = rng::uniform(&mut rng, -2.0, 2.0);
        }
        robot.refresh_derived(c);
        let mut world = WorldState {
            robot,
            ball: BallState::at_rest(50.0, 50.0, params.ball_radius, 0.2, 0.0),
            terrain: Terrain::flat(),
            gravity: Vector3::new(0.0, 0.0, -params.gravity),
            time: 0.0,
            substep: 0,
        };
        let action = [Action::new(target)];
        for step in 0..MAX_SETTLE_STEPS {
            step_world(&mut world, &action, &dynamics, params)?;
            let r = &world.robot;
            let still = r.base_lin_vel.norm() < 0.05 && r.base_ang_vel.norm() < 0.1;
            if step + 1 >= SETTLE_STEPS && still {
                break;
            }
        }
        let mut r = world.robot;
        r.base_position.x = 0.0;
        r.base_position.y = 0.0;
        r.base_lin_vel = Vector3::zeros();
        r.base_ang_vel = Vector3::zeros();
        r.qd = [0.0; NUM_JOINTS];
        r.qdd = [0.0; NUM_JOINTS];
        r.tau = [0.0; NUM_JOINTS];
        r.foot_anchor = [None; 4];
        r.corner_anchor = [None; 8];
        r.refresh_derived(c);
        states.push(r);
    }
    Ok(FallBank { states })
}

/// Fresh episode state.
///
/// Dribble: random yaw, joints uniformly perturbed about the stand pose,
/// base at its loaded equilibrium height and the ball at rest uniformly
/// within `env.reset_ball_radius` of the robot. Recovery: a random fall-bank
/// entry with a random heading, raised to clear the sampled terrain.
pub fn reset_world(
    rng: &mut SimRng,
    mode: TaskMode,
    env: &EnvConfig,
    dynamics: &EpisodeDynamics,
    params: &SimParams,
    bank: Option<&FallBank>,
) -> Result<WorldState, SimError> {
    let c = &params.robot;
    let terrain = Terrain::perlin(dynamics.perlin_magnitude, dynamics.terrain_seed);
    let yaw = rng::uniform(rng, -std::f64::consts::PI, std::f64::consts::PI);
    let heading = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
    let robot = match mode {
        TaskMode::Dribble => {
            let mass = base_body(params, dynamics).mass;
            let sag = mass * params.gravity / (4.0 * params.ground_stiffness);
            let mut r = RobotState::standing(c, c.nominal_height() - sag);
            r.base_orientation = heading;
            for j in 0..NUM_JOINTS {
                let noise = rng::uniform(rng, -env.reset_joint_noise, env.reset_joint_noise);
                r.q[j] = (c.stand_pose[j] + noise).clamp(c.joint_lower[j], c.joint_upper[j]);
            }
            r.refresh_derived(c);
            r
        }
        TaskMode::Recovery => {
            let bank = bank.filter(|b| !b.is_empty()).ok_or(SimError::EmptyFallBank)?;
            let idx = rng.random_range(0..bank.len());
            let mut r = bank.states[idx].clone();
            r.base_orientation = heading * r.base_orientation;
            r.refresh_derived(c);
            let clearance = r
                .foot_pos
                .iter()
                .map(|p| terrain.height(p.x, p.y) + c.foot_radius - p.z)
                .fold(terrain.height(0.0, 0.0), f64::max);
            r.base_position.z += clearance.max(0.0) + 0.01;
            r.refresh_derived(c);
            r
        }
    };
    let [dx, dy] = rng::disk(rng, env.reset_ball_radius);
    let mut ball = BallState::at_rest(
        robot.base_position.x + dx,
        robot.base_position.y + dy,
        params.ball_radius,
        dynamics.ball_mass,
        dynamics.drag_coeff,
    );
    ball.position.z = terrain.height(ball.position.x, ball.position.y)
        + resting_height(params.ball_radius, dynamics.ball_mass, params.gravity, params);
    Ok(WorldState { robot, ball, terrain, gravity: Vector3::new(0.0, 0.0, -params.gravity), time: 0.0, substep: 0 })
}
