//! Counter-keyed random streams.
//!
//! Every consumer of randomness derives its generator from a key tuple, so
//! results never depend on scheduling order or worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a key tuple into a single 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Purpose tags keep streams used for different jobs apart.
pub mod purpose {
    pub const WORLD: u64 = 1;
    pub const EXPERT: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const INIT: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const ROLLOUT: u64 = 6;
    pub const GOAL: u64 = 7;
    pub const SAMPLES: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const MGAIL: u64 = 10;
}
