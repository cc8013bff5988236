//! Seeded random streams.
//!
//! Every stochastic step of a simulation draws from its own ChaCha8 stream,
//! keyed by a 64-bit seed. Sub-streams (per node, per replicate, per purpose)
//! are derived by mixing a parent seed with a label through SplitMix64, so
//! adding a new consumer never perturbs an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// One SplitMix64 finalization step.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `parent` and a stream label.
pub fn mix(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}
