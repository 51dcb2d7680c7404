//! Seeded, splittable randomness.
//!
//! Every random draw in the crate flows from a `u64` seed through
//! [`Pcg64Mcg`]. Child streams are derived with SplitMix64 so a parent
//! seed and a stream label always map to the same child seed, regardless
//! of the order in which siblings are drawn.

use rand::SeedableRng;
pub use rand_pcg::Pcg64Mcg as Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of child stream `stream` from `seed`.
pub fn split(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(GOLDEN))
}

/// Derives a child seed from a textual label, e.g. a language name.
pub fn split_label(seed: u64, label: &str) -> u64 {
    // FNV-1a; stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    split(seed, h)
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
