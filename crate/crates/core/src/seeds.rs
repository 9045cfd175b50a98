//! Named-stream seed derivation.
//!
//! Every random decision in a run draws from a substream derived from
//! (master seed, fold id, component tag[, index]) by hashing, so distinct
//! components get independent generators and parallel execution order can
//! never change results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a deterministic generator for a named component of a fold.
pub fn stream(master: u64, fold: u64, tag: &str) -> ChaCha8Rng {
    stream_n(master, fold, tag, 0)
}

/// As [`stream`], with an extra index for per-entity substreams
/// (e.g. one stream per client).
pub fn stream_n(master: u64, fold: u64, tag: &str, index: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(fold.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// A u64 drawn from a named stream, for components that take plain seeds.
pub fn derive_seed(master: u64, fold: u64, tag: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream_n(master, fold, tag, index).next_u64()
}
