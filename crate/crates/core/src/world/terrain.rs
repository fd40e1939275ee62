use serde::{Deserialize, Serialize};

/// Ground height field: flat plane plus optional gradient noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Terrain {
    /// Noise amplitude (m); zero means a flat plane at z = 0.
    pub magnitude: f64,
    /// Lattice spacing of the noise (m).
    pub cell: f64,
    pub seed: u64,
}

impl Default for Terrain {
    fn default() -> Self {
        Self::flat()
    }
}

impl Terrain {
    pub fn flat() -> Self {
        Self { magnitude: 0.0, cell: 1.0, seed: 0 }
    }

    pub fn perlin(magnitude: f64, seed: u64) -> Self {
        Self { magnitude, cell: 1.0, seed }
    }

    pub fn height(&self, x: f64, y: f64) -> f64 {
        if self.magnitude == 0.0 {
            return 0.0;
        }
        self.magnitude * perlin2(x / self.cell, y / self.cell, self.seed)
    }
}

fn hash(ix: i64, iy: i64, seed: u64) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h ^= (ix as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h = h.rotate_left(31).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= (iy as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= h >> 32;
    h.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (h >> 29)
}

fn gradient(ix: i64, iy: i64, seed: u64) -> (f64, f64) {
    let angle = (hash(ix, iy, seed) >> 11) as f64 * (std::f64::consts::TAU / (1u64 << 53) as f64);
    (angle.cos(), angle.sin())
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Classic 2-D gradient noise in roughly [-0.71, 0.71].
fn perlin2(x: f64, y: f64, seed: u64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let dot = |gx: i64, gy: i64, dx: f64, dy: f64| {
        let (a, b) = gradient(gx, gy, seed);
        a * dx + b * dy
    };
    let n00 = dot(ix, iy, fx, fy);
    let n10 = dot(ix + 1, iy, fx - 1.0, fy);
    let n01 = dot(ix, iy + 1, fx, fy - 1.0);
    let n11 = dot(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
    let (u, v) = (fade(fx), fade(fy));
    let a = n00 + u * (n10 - n00);
    let b = n01 + u * (n11 - n01);
    a + v * (b - a)
}
