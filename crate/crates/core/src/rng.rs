//! Deterministic per-task random streams.
//!
//! Every independent task (a unit, a site, a training run) draws from its own
//! ChaCha stream so results do not depend on how tasks are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; used to derive child seeds that do not collide
/// across nesting levels.
pub fn mix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for task `index` under `seed` (seeded by `seed ^ index`).
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

/// Seed for a child scope, e.g. the per-site streams of one unit.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    mix(seed ^ mix(index))
}
