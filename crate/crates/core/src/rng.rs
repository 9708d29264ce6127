//! Seed-derived random streams.
//!
//! Every stochastic draw in a run comes from a stream identified by the run
//! seed plus a short path of tags, so work can be split across threads (or
//! reordered) without changing any sampled value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream tags used by the experiment runner and the acquisition bundle.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const NOISE_F: u64 = 2;
    pub const NOISE_G: u64 = 3;
    pub const NOISE_CU: u64 = 4;
    pub const NOISE_CL: u64 = 5;
    pub const ITERATION: u64 = 6;
    pub const BUNDLE: u64 = 7;
    pub const SAMPLE: u64 = 8;
    pub const RANDOM_QUERY: u64 = 9;
    pub const STARTS: u64 = 10;
    pub const PROBLEM: u64 = 11;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed and a tag path into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t.wrapping_add(0xA5A5))))
}

pub fn stream(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_key(seed, path))
}
