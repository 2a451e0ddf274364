//! Deterministic seed derivation.
//!
//! Every random stream in a run (initialization, partitioning, client
//! selection, per-epoch shuffles) is seeded from the master seed through
//! [`derive_seed`], so a stream depends only on its coordinates and never on
//! how many draws other streams made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags, kept distinct so that sibling streams never collide.
pub mod tag {
    pub const INIT: u64 = 0x1;
    pub const PARTITION: u64 = 0x2;
    pub const SHARD: u64 = 0x3;
    pub const SELECT: u64 = 0x4;
    pub const EPOCH: u64 = 0x5;
    pub const RING: u64 = 0x6;
    pub const SWEEP: u64 = 0x7;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of coordinates into a new 64-bit seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
