//! Seeded generator streams. Every random draw in a run comes from a
//! ChaCha stream keyed by the run seed and the consumer, so reordering one
//! consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EnvRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Environment = 1,
    Exploration = 2,
    Init = 3,
    Replay = 4,
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha8Rng {
    seeded_sub(seed, stream, 0)
}

/// Stream for one of several consumers of the same kind (e.g. per agent).
pub fn seeded_sub(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | index);
    rng
}
