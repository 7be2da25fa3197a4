//! Stable seed derivation so every stochastic component can be keyed off one
//! global seed, independent of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a key (cell index, disturbance index, stream tag...).
pub fn mix(seed: u64, key: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ key.rotate_left(17) ^ 0xA076_1D64_78BD_642F)
}

pub fn rng(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, key))
}

/// Stream tags for the top-level fan-out of a global seed.
pub mod stream {
    pub const SCAN: u64 = 1;
    pub const SOLM: u64 = 2;
    pub const MDE: u64 = 3;
    pub const MAP: u64 = 4;
    pub const VALIDATE: u64 = 5;
    pub const SCAN_PATTERN: u64 = 6;
}
