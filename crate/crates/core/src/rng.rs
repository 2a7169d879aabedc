//! Reproducible random streams.
//!
//! Every random decision in the crate (fold shuffles, subsample draws, data
//! generation, tree row sampling) pulls from a ChaCha stream whose seed is
//! derived from a base seed and a path of integer tags. Any replication,
//! split or cluster can therefore be regenerated in isolation, independent
//! of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a path of tags.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// A generator for the stream addressed by `base` and `tags`.
pub fn stream(base: u64, tags: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, kept in one place so call sites never collide.
pub mod tag {
    pub const FOLDS: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const PROPENSITY: u64 = 3;
    pub const OUTCOME: u64 = 4;
    pub const REPLICATION: u64 = 5;
    pub const TRUTH: u64 = 6;
    pub const STACK_FOLDS: u64 = 7;
    pub const LEARNER: u64 = 8;
    pub const DGP: u64 = 9;
}
