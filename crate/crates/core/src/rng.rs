//! Seed derivation and the RNG used throughout the pipeline.
//!
//! One global seed fans out to per-component seeds by hashing the component
//! name together with the global seed. Each component is therefore
//! independently reproducible: rerunning only the classifier with the same
//! global seed draws the same stream it saw in the full run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a component seed from the global seed.
///
/// `seed = first 8 bytes (LE) of SHA-256(component_name || global_seed_le)`.
pub fn derive_seed(global_seed: u64, component: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(component.as_bytes());
    hasher.update(global_seed.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is at least 8 bytes"))
}

/// The deterministic RNG used everywhere. ChaCha8 is seedable, portable
/// across platforms and its stream position can be captured for checkpoints.
pub type Rng = ChaCha8Rng;

/// Build the RNG for a component from the global seed.
pub fn component_rng(global_seed: u64, component: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(global_seed, component))
}

/// Serializable RNG position: seed plus stream offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(seed: u64, rng: &Rng) -> Self {
        RngState { seed, word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> Rng {
        let mut rng = Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
