//! Deterministic randomness split into named streams.
//!
//! Every random draw in the artifact flows from one root seed. Independent
//! concerns (parameter init, batch shuffling, synthetic data, ...) pull from
//! differently named streams so that, e.g., changing the number of epochs
//! does not shift the data a later stage sees.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name, mixed with the root seed.
fn stream_id(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.rotate_left(17);
    for &b in name.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// A named random stream derived from `seed`. Identical (seed, name) pairs
/// yield identical generators on every platform.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_id(seed, name))
}
