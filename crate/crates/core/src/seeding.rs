//! Deterministic seed derivation for parameter sweeps.

use sha2::{Digest, Sha256};

/// Master seed used when an experiment does not set one.
pub const DEFAULT_MASTER_SEED: u64 = 20_190_101;

const EMBEDDING_TAG: u64 = 0x454d_4244;
const RUN_TAG: u64 = 0x5255_4e00;

fn digest_u64(h: Sha256) -> u64 {
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// First 8 bytes (little-endian) of SHA-256 over the little-endian master
/// seed followed by each part.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    digest_u64(h)
}

/// Seed of embedding realization `realization` for lattice `L` at size `K`.
pub fn embedding_seed(master: u64, side_length: usize, k: f64, realization: usize) -> u64 {
    derive_seed(master, &[EMBEDDING_TAG, side_length as u64, k.to_bits(), realization as u64])
}

/// Seed of one QMC run; `mode` is the mode's lowercase name.
pub fn run_seed(master: u64, side_length: usize, k: f64, gamma_index: usize, realization: usize, mode: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in [RUN_TAG, side_length as u64, k.to_bits(), gamma_index as u64, realization as u64] {
        h.update(p.to_le_bytes());
    }
    h.update(mode.as_bytes());
    digest_u64(h)
}
