//! Seed derivation shared by every sampling operation.
//!
//! All randomness in the crate flows from a `u64` seed through ChaCha8, so a
//! run is a pure function of its inputs and the master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream index (splitmix64 finalizer).
///
/// Per-sample seeds are `derive(run_seed, sample_index)`, which makes parallel
/// execution order-independent.
pub fn derive(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a seed for a named sub-step of a sample (e.g. "knobs", "distractors").
pub fn derive_named(base: u64, label: &str) -> u64 {
    derive(base, fnv1a64(label.as_bytes()))
}

/// FNV-1a, used wherever a stable (cross-version) string hash is needed.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
