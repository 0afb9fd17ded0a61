//! Seeded random streams.
//!
//! Every random decision in the crate draws from a ChaCha8 generator keyed by a
//! user seed plus a stream id, so independent components never share state and
//! results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with a tag into a new seed (splitmix64 finalizer).
pub fn derive(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// Stream ids used across the crate.
pub(crate) const SYNTH_CENTERS: u64 = 1;
pub(crate) const SYNTH_TRAIN: u64 = 2;
pub(crate) const SYNTH_TEST: u64 = 3;
pub(crate) const NOISE: u64 = 10;
pub(crate) const PROBE_INIT: u64 = 20;
pub(crate) const PROBE_SHUFFLE: u64 = 21;
pub(crate) const FILTER: u64 = 30;
pub(crate) const DROPOUT: u64 = 40;
pub(crate) const SELECT: u64 = 50;
