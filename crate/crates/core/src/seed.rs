//! Per-record seed derivation.

use std::hash::Hasher;

use fnv::FnvHasher;

/// Stable hash of `(seed, key)`, used to give each record its own RNG stream.
pub fn derive(seed: u64, key: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(&seed.to_le_bytes());
    h.write(key.as_bytes());
    h.finish()
}
