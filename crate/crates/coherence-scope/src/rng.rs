//! Deterministic random-stream derivation.
//!
//! Every sampled quantity draws from its own ChaCha12 stream whose 32-byte
//! seed is SHA-256 over the master seed (little-endian u64) followed by a
//! list of context tags and indices (each tag as `len:u64 || utf8`, each
//! index as `u64` little-endian). Parallel and serial sweeps therefore see
//! identical draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use sha2::{Digest, Sha256};

/// Derive an independent stream from a master seed and a context path.
pub fn derive_stream(master: u64, tags: &[&str], indices: &[u64]) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for tag in tags {
        hasher.update((tag.len() as u64).to_le_bytes());
        hasher.update(tag.as_bytes());
    }
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}

/// One binomial draw.
pub fn binomial(rng: &mut ChaCha12Rng, shots: u64, p: f64) -> u64 {
    let p = p.clamp(0.0, 1.0);
    Binomial::new(shots, p).expect("valid binomial parameters").sample(rng)
}
