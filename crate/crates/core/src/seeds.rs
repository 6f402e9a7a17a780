//! Deterministic seed derivation. One master seed fans out into independent
//! streams for data generation, initialization, sampling and augmentation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `tags` into `seed`; distinct tag sequences give unrelated seeds.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Named sub-streams of a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SubSeeds {
    pub data: u64,
    pub threshold: u64,
    pub init: u64,
    pub sampling: u64,
    pub augmentation: u64,
}

impl SubSeeds {
    pub fn expand(master: u64) -> Self {
        Self {
            data: derive_seed(master, &[1]),
            threshold: derive_seed(master, &[2]),
            init: derive_seed(master, &[3]),
            sampling: derive_seed(master, &[4]),
            augmentation: derive_seed(master, &[5]),
        }
    }
}

/// Short hex digest used to tag artifacts with the config that made them.
pub fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// The digest above as an integer, for binary headers.
pub fn content_hash_u64(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
