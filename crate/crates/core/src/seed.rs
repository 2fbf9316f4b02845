//! Seed derivation.
//!
//! Every random stream in the crate is derived by hashing a parent seed with
//! a list of labels, so adding a new consumer never shifts an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn digest(parent: u64, labels: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(b"anonbench-seed\0");
    h.update(parent.to_le_bytes());
    for l in labels {
        h.update((l.len() as u64).to_le_bytes());
        h.update(l.as_bytes());
    }
    h.finalize().into()
}

/// Derive a child seed from `parent` and a label path.
pub fn derive(parent: u64, labels: &[&str]) -> u64 {
    let d = digest(parent, labels);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// A ChaCha8 stream keyed by `parent` and a label path.
pub fn rng(parent: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(parent, labels))
}
