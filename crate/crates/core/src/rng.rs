//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. Parallel
//! Monte-Carlo derives one independent substream per (seed, index) pair so
//! results do not depend on worker count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The master generator for a given seed.
pub fn master(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// An independent substream of `seed`, addressed by `index`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}
