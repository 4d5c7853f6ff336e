//! Seeded random streams.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`], a counter-based
//! generator with a 64-bit seed and a 64-bit stream selector. Independent
//! sub-computations (trees of a forest, splits of an experiment, WSC
//! directions, Monte-Carlo trials) each get their own stream derived from a
//! parent seed and an index, so results do not depend on evaluation order.
//! Reproducibility is guaranteed for this implementation only.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

/// Generator for `seed`, positioned at stream 0.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the `stream`-th child of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a parent seed with a label into a child seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
