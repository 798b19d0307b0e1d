//! Seed plumbing. Every random draw in the crate comes from a ChaCha stream
//! whose seed is derived from a base seed plus a purpose tag and an index, so
//! parallel or resumed work reproduces the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a tag and an index into an independent seed.
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ tag) ^ index)
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tag: u64, index: u64) -> Rng {
    rng_from_seed(derive_seed(base, tag, index))
}

/// Purpose tags for [`derive_seed`].
pub mod tags {
    pub const INIT: u64 = 0x1001;
    pub const DATA_ORDER: u64 = 0x1002;
    pub const MASK: u64 = 0x1003;
    pub const DIFFUSION_STEP: u64 = 0x1004;
    pub const NOISE: u64 = 0x1005;
    pub const DROPOUT: u64 = 0x1006;
    pub const SAMPLING: u64 = 0x1007;
}
