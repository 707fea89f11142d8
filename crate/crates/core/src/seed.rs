//! Named seed streams derived from a single master seed.
//!
//! Every consumer of randomness asks for its own stream by name, so adding a
//! new consumer never perturbs the values another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream names used by a run.
pub mod stream {
    pub const PROJECTION: &str = "projection";
    pub const SOBOL: &str = "sobol";
    pub const INIT: &str = "init";
    pub const MLP_INIT: &str = "mlp_init";
    pub const SUBSAMPLE: &str = "subsample";
    pub const OBJECTIVE: &str = "objective";
    pub const FEATURE_MAP: &str = "feature_map";
    pub const TRIAL: &str = "trial";
}

/// Derives a child seed from `master` keyed by `name`.
pub fn derive(master: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed keyed by `name` and an integer index.
pub fn derive_indexed(master: u64, name: &str, index: u64) -> u64 {
    derive(derive(master, name), &index.to_string())
}

/// The seeds a single run consumes, one per named stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RunSeeds {
    pub projection: u64,
    pub sobol: u64,
    pub init: u64,
    pub mlp_init: u64,
    pub subsample: u64,
    pub objective: u64,
    pub feature_map: u64,
}

impl RunSeeds {
    pub fn from_master(master: u64) -> Self {
        RunSeeds {
            projection: derive(master, stream::PROJECTION),
            sobol: derive(master, stream::SOBOL),
            init: derive(master, stream::INIT),
            mlp_init: derive(master, stream::MLP_INIT),
            subsample: derive(master, stream::SUBSAMPLE),
            objective: derive(master, stream::OBJECTIVE),
            feature_map: derive(master, stream::FEATURE_MAP),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
