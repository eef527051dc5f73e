//! Deterministic seed derivation.
//!
//! Every random draw in the pipeline flows from an explicit `u64` seed
//! through these helpers, so identical seeds reproduce identical runs
//! bit for bit regardless of thread count or platform.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche for combining seed components.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a base seed, a purpose tag, and an index
/// (e.g. the epoch number for shuffles).
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag.wrapping_add(splitmix64(index))))
}

/// The crate-wide RNG: small, fast, seedable, identical everywhere.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream of the same seed, used to partition one logical
/// seed across sampling buckets.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
