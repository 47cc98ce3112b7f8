//! Seeded RNG streams.
//!
//! All randomness in the crate flows from a single global seed through named
//! sub-streams, so independent pipeline stages draw from independent streams
//! and re-running any stage reproduces its output exactly regardless of what
//! ran before it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_label(label: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the sub-stream seed for `(seed, label, index)`.
pub fn stream_seed(seed: u64, label: &str, index: u64) -> u64 {
    mix(mix(seed ^ hash_label(label)).wrapping_add(index))
}

/// A seeded RNG for the named sub-stream.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, label, index))
}
