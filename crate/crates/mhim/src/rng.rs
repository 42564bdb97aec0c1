//! Named, splittable RNG streams.
//!
//! Every source of randomness in a run is a ChaCha stream keyed by the master
//! seed plus a list of name parts (e.g. `["init"]`, `["mask", "3", "bag0042"]`).
//! Streams are independent of each other and of the order in which they are
//! created, so reshuffling data cannot change another stream's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a deterministic RNG from `seed` and a key path.
pub fn stream(seed: u64, parts: &[&str]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for part in parts {
        // Length-prefix each part so ["ab","c"] and ["a","bc"] differ.
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
