//! Little-endian binary world snapshots.
//!
//! Layout (all integers and floats little-endian, floats are IEEE-754 f64):
//!
//! | field | encoding |
//! |---|---|
//! | magic | 4 bytes `WSNP` |
//! | version | u16 |
//! | robot | see [`write_robot`] |
//! | ball | position 3, velocity 3, radius, mass, drag_coeff |
//! | terrain | magnitude, cell, seed (u64) |
//! | gravity | 3 |
//! | time | f64 |
//! | substep | u64 |
//!
//! The robot record is: base position 3, orientation (w, i, j, k), linear
//! velocity 3, angular velocity 3, q 12, qd 12, qdd 12, tau 12, foot contact
//! 4 x u8, gravity_body 3, yaw, foot positions 4x3, foot velocities 4x3,
//! foot forces 4x3, hip/thigh collision u8, then 4 foot anchors and 8 corner
//! anchors each encoded as a u8 presence flag followed by 3 floats.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::SimError;

use super::{BallState, RobotState, Terrain, WorldState};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"WSNP";
pub const SNAPSHOT_VERSION: u16 = 1;

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self { buf: Vec::with_capacity(1024) }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }

    pub fn floats(&mut self, vs: &[f64]) {
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn vec3(&mut self, v: &Vector3<f64>) {
        self.floats(v.as_slice());
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], SimError> {
        if self.pos + n > self.data.len() {
            return Err(SimError::Snapshot(format!(
                "truncated record: need {n} bytes at offset {}, have {}",
                self.pos,
                self.data.len() - self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, SimError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, SimError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, SimError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, SimError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, SimError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[f64; N], SimError> {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = self.f64()?;
        }
        Ok(out)
    }

    pub fn vec3(&mut self) -> Result<Vector3<f64>, SimError> {
        Ok(Vector3::from(self.array::<3>()?))
    }

    pub fn flag(&mut self) -> Result<bool, SimError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(SimError::Snapshot(format!("invalid flag byte {v} at offset {}", self.pos - 1))),
        }
    }

    pub fn finished(&self) -> bool {
        self.pos == self.data.len()
    }
}

fn write_anchor(w: &mut Writer, a: &Option<Vector3<f64>>) {
    match a {
        Some(v) => {
            w.u8(1);
            w.vec3(v);
        }
        None => {
            w.u8(0);
            w.floats(&[0.0; 3]);
        }
    }
}

fn read_anchor(r: &mut Reader) -> Result<Option<Vector3<f64>>, SimError> {
    let present = r.flag()?;
    let v = r.vec3()?;
    Ok(present.then_some(v))
}

pub(crate) fn write_robot(w: &mut Writer, s: &RobotState) {
    w.vec3(&s.base_position);
    let q = s.base_orientation.quaternion();
    w.floats(&[q.w, q.i, q.j, q.k]);
    w.vec3(&s.base_lin_vel);
    w.vec3(&s.base_ang_vel);
    w.floats(&s.q);
    w.floats(&s.qd);
    w.floats(&s.qdd);
    w.floats(&s.tau);
    for c in s.foot_contact {
        w.u8(c as u8);
    }
    w.vec3(&s.gravity_body);
    w.f64(s.yaw_global);
    for group in [&s.foot_pos, &s.foot_vel, &s.foot_force] {
        for v in group.iter() {
            w.vec3(v);
        }
    }
    w.u8(s.hip_thigh_collision as u8);
    for a in &s.foot_anchor {
        write_anchor(w, a);
    }
    for a in &s.corner_anchor {
        write_anchor(w, a);
    }
}

pub(crate) fn read_robot(r: &mut Reader) -> Result<RobotState, SimError> {
    let base_position = r.vec3()?;
    let [qw, qi, qj, qk] = r.array::<4>()?;
    let base_orientation = UnitQuaternion::new_unchecked(Quaternion::new(qw, qi, qj, qk));
    let base_lin_vel = r.vec3()?;
    let base_ang_vel = r.vec3()?;
    let q = r.array()?;
    let qd = r.array()?;
    let qdd = r.array()?;
    let tau = r.array()?;
    let mut foot_contact = [false; 4];
    for c in foot_contact.iter_mut() {
        *c = r.flag()?;
    }
    let gravity_body = r.vec3()?;
    let yaw_global = r.f64()?;
    let mut groups = [[Vector3::zeros(); 4]; 3];
    for g in groups.iter_mut() {
        for v in g.iter_mut() {
            *v = r.vec3()?;
        }
    }
    let hip_thigh_collision = r.flag()?;
    let mut foot_anchor = [None; 4];
    for a in foot_anchor.iter_mut() {
        *a = read_anchor(r)?;
    }
    let mut corner_anchor = [None; 8];
    for a in corner_anchor.iter_mut() {
        *a = read_anchor(r)?;
    }
    let [foot_pos, foot_vel, foot_force] = groups;
    Ok(RobotState {
        base_position,
        base_orientation,
        base_lin_vel,
        base_ang_vel,
        q,
        qd,
        qdd,
        tau,
        foot_contact,
        gravity_body,
        yaw_global,
        foot_pos,
        foot_vel,
        foot_force,
        hip_thigh_collision,
        foot_anchor,
        corner_anchor,
    })
}

/// Encodes the full world state. Decoding the result reproduces the state
/// bit for bit.
pub fn encode_snapshot(world: &WorldState) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&SNAPSHOT_MAGIC);
    w.u16(SNAPSHOT_VERSION);
    write_robot(&mut w, &world.robot);
    let b = &world.ball;
    w.vec3(&b.position);
    w.vec3(&b.velocity);
    w.floats(&[b.radius, b.mass, b.drag_coeff]);
    w.floats(&[world.terrain.magnitude, world.terrain.cell]);
    w.u64(world.terrain.seed);
    w.vec3(&world.gravity);
    w.f64(world.time);
    w.u64(world.substep);
    w.buf
}

pub fn decode_snapshot(data: &[u8]) -> Result<WorldState, SimError> {
    let mut r = Reader::new(data);
    if r.take(4)? != SNAPSHOT_MAGIC {
        return Err(SimError::Snapshot("bad magic, expected WSNP".into()));
    }
    let version = r.u16()?;
    if version != SNAPSHOT_VERSION {
        return Err(SimError::Snapshot(format!("unsupported snapshot version {version}")));
    }
    let robot = read_robot(&mut r)?;
    let position = r.vec3()?;
    let velocity = r.vec3()?;
    let [radius, mass, drag_coeff] = r.array()?;
    let [magnitude, cell] = r.array()?;
    let seed = r.u64()?;
    let gravity = r.vec3()?;
    let time = r.f64()?;
    let substep = r.u64()?;
    if !r.finished() {
        return Err(SimError::Snapshot("trailing bytes after snapshot".into()));
    }
    Ok(WorldState {
        robot,
        ball: BallState { position, velocity, radius, mass, drag_coeff },
        terrain: Terrain { magnitude, cell, seed },
        gravity,
        time,
        substep,
    })
}
