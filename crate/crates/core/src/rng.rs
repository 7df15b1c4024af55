//! Seed handling.
//!
//! Every stochastic stage draws from a ChaCha8 stream derived from a single
//! master seed and a path of integer tags, so a (k, seed) grid cell or a
//! permutation replicate gets the same stream whether it runs on one thread
//! or many.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

/// Name recorded in reports next to every seed.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9), stream-split by SplitMix64 path hashing";

/// Stream tags for the different pipeline stages.
pub mod tags {
    pub const SELECT_K: u64 = 0x005e_1ec7;
    pub const FINAL_FIT: u64 = 0xf1_4a1;
    pub const SILHOUETTE_NULL: u64 = 0x5_11_0e;
    pub const NETWORK_NULL: u64 = 0x0004_e70e;
    pub const SYNTH: u64 = 0x594e;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed and a path of tags.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

/// Generator seeded directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> PipelineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Generator for the stream identified by `path` under `master`.
pub fn derive_rng(master: u64, path: &[u64]) -> PipelineRng {
    rng_from_seed(derive_seed(master, path))
}
