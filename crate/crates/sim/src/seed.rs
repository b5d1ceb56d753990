//! Derivation of independent random streams from a single experiment seed.
//!
//! Every consumer of randomness (topology layout, sensor readings, path
//! selection, per-node processing, link loss, ...) derives its own
//! `ChaCha20Rng` by hashing the experiment seed together with a textual
//! purpose label and the integer coordinates that identify the consumer.
//! Streams are therefore independent of each other and of iteration
//! order: adding a new consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Derive a dedicated random stream from the experiment seed.
///
/// `labels` name the purpose (e.g. `["path"]`), `ids` pin the coordinates
/// (run index, network size, node id, ...). Labels are length-prefixed so
/// that distinct label lists can never collide.
pub fn derive_rng(seed: u64, labels: &[&str], ids: &[u64]) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    for id in ids {
        hasher.update(id.to_le_bytes());
    }
    ChaCha20Rng::from_seed(hasher.finalize().into())
}
