//! Seeded random streams.
//!
//! Every random choice in the crate goes through a [`ChaCha8Rng`] derived from
//! a 64-bit seed and a stream id, so independent consumers (posterior sampling,
//! minibatch selection, network training) never share state.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub const STREAM_DATA: u64 = 1;
pub const STREAM_SAMPLER: u64 = 2;
pub const STREAM_MINIBATCH: u64 = 3;
pub const STREAM_TRAINING: u64 = 4;
pub const STREAM_INIT: u64 = 5;
pub const STREAM_BASELINE: u64 = 6;
pub const STREAM_CONTAMINATION: u64 = 7;
pub const STREAM_SPLIT: u64 = 8;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a trial index into a base seed (splitmix64 finalizer).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
