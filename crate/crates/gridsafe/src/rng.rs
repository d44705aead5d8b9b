//! Deterministic RNG stream derivation.
//!
//! Every stochastic component (map generation, rollout sampling, parameter
//! initialization, ...) draws from its own ChaCha stream derived from a base
//! seed plus a path of stream ids. Identical seeds and paths always yield
//! identical streams, independent of call order elsewhere in the program.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; mixes a 64-bit value into a well-distributed one.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit stream seed from a base seed and a path of stream ids.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut acc = splitmix64(seed);
    for &id in path {
        acc = splitmix64(acc ^ splitmix64(id));
    }
    acc
}

/// Builds an independent seeded generator for the given stream path.
pub fn derive_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
