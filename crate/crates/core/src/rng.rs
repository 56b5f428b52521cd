//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from a root seed and a path of integer keys, so results never
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(mix(seed), |acc, &k| mix(acc ^ mix(k)))
}

pub fn rng_for(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}

/// Stream tags so that different consumers of one root seed never collide.
pub mod stream {
    pub const CLIP: u64 = 1;
    pub const CORRUPT: u64 = 2;
    pub const SUBSAMPLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SAMPLER: u64 = 5;
    pub const AUGMENT: u64 = 6;
    pub const SCHEMA: u64 = 7;
    pub const HEAD: u64 = 8;
}
