//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from `(run seed, stream id)`, so independent consumers never
//! perturb each other's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids for the generators owned by the training pipeline.
pub mod stream {
    pub const SPLIT: u64 = 0x5350_4c49_5400_0000;
    pub const LOUVAIN: u64 = 0x4c4f_5556_0000_0000;
    pub const INIT_BASE: u64 = 0x4241_5345_0000_0000;
    pub const INIT_DISC: u64 = 0x4449_5343_0000_0000;
    pub const SAMPLING: u64 = 0x5341_4d50_0000_0000;
    pub const DEBIAS: u64 = 0x4445_4249_0000_0000;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ stream)
}

pub fn rng_for(seed: u64, stream: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream))
}
