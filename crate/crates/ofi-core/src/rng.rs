//! Seed derivation. Every Monte Carlo path owns its own RNG stream derived
//! from `(seed, stream_index)`, so results do not depend on how paths are
//! scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type PathRng = ChaCha12Rng;

/// RNG for a single stream. Streams with distinct indices are independent.
pub fn stream_rng(seed: u64, stream: u64) -> PathRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// RNG for scalar (non-batched) use.
pub fn root_rng(seed: u64) -> PathRng {
    stream_rng(seed, 0)
}
