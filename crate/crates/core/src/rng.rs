//! Seed derivation and RNG construction.
//!
//! All randomness in the crate flows from caller-provided `u64` seeds.
//! Independent streams (per-example attack noise, per-epoch shuffles,
//! evaluation perturbation sets) are derived with [`mix_seed`], so results
//! are reproducible bit-for-bit regardless of thread count or platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche behavior for cheap seed mixing.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and a stream index.
pub fn mix_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream))
}

/// Derives a child seed from a base seed and two stream indices.
pub fn mix_seed3(base: u64, a: u64, b: u64) -> u64 {
    mix_seed(mix_seed(base, a), b)
}

/// The deterministic generator used throughout the crate.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
