//! Seeded random streams.
//!
//! Every consumer of randomness gets its own generator derived from the run
//! seed plus a stream tag and an index, so that adding draws to one stream
//! never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream tags. Values are arbitrary but frozen: changing one changes every
/// seeded result downstream.
pub mod stream {
    pub const INIT: u64 = 0x1;
    pub const SPLIT: u64 = 0x2;
    pub const NEGATIVES: u64 = 0x3;
    pub const PRIMARY_BATCH: u64 = 0x4;
    pub const VAL_BATCH: u64 = 0x5;
    pub const PRETEXT_BATCH: u64 = 0x6;
    pub const PAIR_SAMPLER: u64 = 0x7;
    pub const META_PRETEXT_BATCH: u64 = 0x8;
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(stream)) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}
