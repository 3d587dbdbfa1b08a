//! Stable hashing and seeded RNG derivation.
//!
//! Every random decision in the toolkit is derived from an explicit seed plus a
//! stream index, so results never depend on thread scheduling or iteration order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// 64-bit hash of a sequence of byte strings, stable across platforms and
/// compiler versions. Parts are length-prefixed so `["ab","c"]` and `["a","bc"]`
/// hash differently.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

/// RNG for `(seed, stream)`. Distinct streams are independent ChaCha streams.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hex SHA-256 of a byte buffer.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
