//! Seeded random streams.
//!
//! Every consumer of randomness (environment resets, noise events, action
//! sampling, minibatch shuffling) draws from its own ChaCha8 stream derived
//! from `(seed, stream id)`. ChaCha is counter based, so a stream's output
//! depends only on its key and position, never on which worker advanced it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids reserved per environment instance.
pub const STREAMS_PER_ENV: u64 = 4;

/// Purpose of a per-environment stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    World = 0,
    Noise = 1,
    Policy = 2,
    Sensor = 3,
}

/// Stream id used for run-level draws (shuffles, network init).
pub const RUN_STREAM: u64 = u64::MAX;

pub fn stream(seed: u64, stream_id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn env_stream(seed: u64, env_index: u64, kind: StreamKind) -> SimRng {
    stream(seed, env_index * STREAMS_PER_ENV + kind as u64)
}

/// Uniform draw in `[lo, hi]`. Degenerate ranges return `lo`.
pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform draw in the open interval (0, 1).
pub fn open01(rng: &mut impl Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Area-uniform point in a disk of the given radius.
pub fn disk(rng: &mut impl Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

/// Standard normal draw (Box-Muller, one value per call).
pub fn normal(rng: &mut impl Rng) -> f64 {
    let u1 = open01(rng);
    let u2 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
