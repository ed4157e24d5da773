//! Seed derivation shared by every stochastic stage.
//!
//! All randomness flows from a single master seed. Child seeds are derived
//! with [`mix64`], so any episode, task or training run can be replayed in
//! isolation from its index alone.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `(seed, index)`.
///
/// Non-commutative: `mix64(a, b)` and `mix64(b, a)` differ.
pub fn mix64(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_mul(GOLDEN_GAMMA) ^ 0x5851_f42d_4c95_7f2d))
}

/// Domain tags for child seeds, so different stages never share a stream.
pub(crate) mod tag {
    pub const INIT: u64 = 0x494e_4954;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const BASELINE: u64 = 0x4241_5345;
    pub const ACC_UP: u64 = 0x4143_4355;
    pub const SEARCH: u64 = 0x5345_4152;
    pub const FINAL: u64 = 0x4649_4e41;
    pub const TASK: u64 = 0x5441_534b;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const DATA: u64 = 0x4441_5441;
    pub const RUN: u64 = 0x5255_4e5f;
}

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}
