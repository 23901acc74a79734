//! Seeded RNG streams.
//!
//! Every source of randomness in a run is a ChaCha8 stream derived from the
//! run seed plus a purpose label, so distinct purposes (model init, data
//! order, replay sampling, padding noise, ...) never share a stream and two
//! runs with the same seed are bit-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a 64-bit state into a well-distributed output (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit fingerprint of `(seed, label)`.
pub fn stream_id(seed: u64, label: &str) -> u64 {
    let mut h = mix(seed ^ 0x853c_49e6_748f_ea9b);
    for &b in label.as_bytes() {
        h = mix(h ^ u64::from(b));
    }
    h
}

/// A deterministic RNG for the given seed and purpose label.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_id(seed, label))
}

/// Like [`stream`] but additionally keyed by an index (task id, class id, ...).
pub fn indexed_stream(seed: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(stream_id(seed, label) ^ mix(index)))
}
