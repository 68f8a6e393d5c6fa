//! Labeled seed derivation.
//!
//! Every random stream is derived from a root seed plus a component label and
//! an index, so results never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a 256-bit generator seed from `(root, label, index)`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> [u8; 32] {
    let digest = Sha256::new()
        .chain_update(root.to_le_bytes())
        .chain_update((label.len() as u64).to_le_bytes())
        .chain_update(label.as_bytes())
        .chain_update(index.to_le_bytes())
        .finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(digest.as_slice());
    seed
}

pub fn derive_rng(root: u64, label: &str, index: u64) -> Rng {
    Rng::from_seed(derive_seed(root, label, index))
}

/// Derives a child root seed, for handing to an operation that takes a `u64` seed.
pub fn derive_u64(root: u64, label: &str, index: u64) -> u64 {
    let s = derive_seed(root, label, index);
    u64::from_le_bytes(s[..8].try_into().expect("8 bytes"))
}
