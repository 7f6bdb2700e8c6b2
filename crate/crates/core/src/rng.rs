//! Named random streams derived from a single seed.
//!
//! Each purpose (parameter init, shuffling, synthetic data) draws from its
//! own ChaCha stream keyed by SHA-256 of the seed and the purpose name, so
//! adding draws to one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const SPLIT: &str = "split";
pub const SYNTH: &str = "synth";

pub fn stream(seed: u64, purpose: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(purpose.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}
