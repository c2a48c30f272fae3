//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! 64-bit seed, so a seed names the same sequence on every platform.
//! Independent sub-streams (per frame, per training step, per noise kind)
//! are keyed by [`derive_seed`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Opens the stream named by `seed`.
pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a parent seed with a sub-stream label (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut z = seed ^ label.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Labels for the derived noise streams.
pub(crate) mod label {
    pub const IMAGE: u64 = 1;
    pub const TRANSLATION: u64 = 2;
    pub const ROTATION: u64 = 3;
}
