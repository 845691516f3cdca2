//! Seed derivation for independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a path of stream identifiers, e.g.
/// `derive_seed(run_seed, &[REINIT, tau])`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

// Stream tags keep the random streams of different consumers apart.
pub(crate) const STREAM_SPLIT: u64 = 1;
pub(crate) const STREAM_RESPLIT: u64 = 2;
pub(crate) const STREAM_GNN_INIT: u64 = 3;
pub(crate) const STREAM_EXPLAINER_INIT: u64 = 4;
pub(crate) const STREAM_GENERATE: u64 = 5;
pub(crate) const STREAM_NOISE: u64 = 6;
pub(crate) const STREAM_CONTROL: u64 = 7;
pub(crate) const STREAM_REINIT: u64 = 8;
