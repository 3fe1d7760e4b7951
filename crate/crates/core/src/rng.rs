//! Seed management.
//!
//! A single user-facing `--seed` is fanned out into independent streams
//! (data order, parameter init, augmentation, probe init, ...) so that e.g.
//! changing the number of training epochs does not perturb parameter
//! initialisation. Streams are derived by hashing the base seed with a
//! string tag through splitmix64, which is stable across platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 step: maps a 64-bit state to a well-mixed 64-bit output.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from a base seed and a stream tag.
///
/// The tag is folded bytewise through splitmix64, so distinct tags give
/// (for all practical purposes) independent streams.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut h = splitmix64(base ^ 0xa076_1d64_78bd_642f);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    h
}

/// A seeded, reproducible RNG for the given base seed and stream tag.
pub fn stream(base: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag))
}

/// A seeded RNG for a tagged stream with an additional numeric index
/// (per-sample, per-epoch, ... streams).
pub fn indexed_stream(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(derive_seed(base, tag) ^ index))
}
