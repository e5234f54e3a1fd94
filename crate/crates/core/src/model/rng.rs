use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Random stream used throughout the crate.
pub type StreamRng = ChaCha8Rng;

/// Deterministic random stream for `(seed, label)`.
///
/// The 256-bit ChaCha key is the SHA-256 of the seed and label, so distinct
/// labels give independent streams and nothing depends on thread scheduling.
/// Callers put everything that identifies a draw into the label
/// (`"delivery/3/17"`, `"noise/2"`, ...).
pub fn seeded_rng(seed: u64, label: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
