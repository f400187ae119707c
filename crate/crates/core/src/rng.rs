//! Deterministic seed splitting.
//!
//! Every random stream in the bench is derived from the campaign seed plus a
//! set of integer tags (stream purpose, channel, block, entry index ...), so
//! any sample can be regenerated independently of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of tags.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t)))
}

/// Seeded stream for a `(seed, tags)` pair.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream purposes, used as the first tag.
pub mod purpose {
    pub const NOISE_VOLTAGE: u64 = 1;
    pub const NOISE_CURRENT: u64 = 2;
    pub const NOISE_TAIL: u64 = 3;
    pub const PLAN: u64 = 4;
    pub const ENTRY: u64 = 5;
    pub const TRANSPORT: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const TRIAL: u64 = 8;
}
