//! Stable seed derivation for independent RNG streams.

use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from an ordered list of labels. The same labels give
/// the same seed on every platform, so parallel workers can own their streams
/// without coordination.
pub fn derive_seed(parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 has 32 bytes"))
}
