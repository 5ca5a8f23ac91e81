//! Keyed random streams: every stochastic decision draws from a generator
//! derived from a tuple of integers, so results do not depend on the order
//! in which work is executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn keyed(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// Stream tags so different consumers of the same seed never collide.
pub mod stream {
    pub const MASK: u64 = 1;
    pub const AUGMENT: u64 = 2;
    pub const SHUFFLE: u64 = 3;
    pub const INIT: u64 = 4;
    pub const SCENE: u64 = 5;
    pub const SUBSAMPLE: u64 = 6;
    pub const VARSHIFT: u64 = 7;
}
