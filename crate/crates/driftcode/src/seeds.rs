//! Deterministic seed derivation.
//!
//! Simulations derive per-read and per-frame sub-seeds from a master seed so
//! that results are reproducible and independent of execution order or
//! worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 output function.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a master seed and a tag (read index, frame
/// index, ...). Distinct tags give statistically independent streams.
pub fn derive(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_add(0x6C62_272E_07BB_0142)))
}

/// A seeded random generator. All stochastic routines in this crate draw
/// from ChaCha streams so results are stable across platforms.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
