//! Named sub-seeds derived from one root seed.
//!
//! Every random source in an experiment (noise, init, shuffle, dropout,
//! mixup) draws from its own stream so that one of them can be varied while
//! the others stay frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::features::fnv1a64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        SeedTree { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Sub-seed for the stream called `name`.
    pub fn derive(&self, name: &str) -> u64 {
        splitmix64(self.root ^ fnv1a64(name.as_bytes()))
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(name))
    }
}

/// One round of the SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a seed with an index into a fresh seed (used for per-example dropout masks).
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}
