//! Named random streams derived from one root seed.
//!
//! Every consumer asks for its own stream (`"track"`, `"init"`, `"sampler"`,
//! `"eval"`, ...), so changing how much randomness one component uses never
//! shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const TRACK: &str = "track";
pub const INIT: &str = "init";
pub const SAMPLER: &str = "sampler";
pub const EVAL: &str = "eval";
pub const SPLIT: &str = "split";
pub const EXPERT: &str = "expert";

/// FNV-1a followed by a splitmix finalizer; stable across platforms and releases.
fn mix(root: u64, name: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes().chain(index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ root.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedStreams {
    root: u64,
}

impl SeedStreams {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    pub fn seed(&self, name: &str) -> u64 {
        mix(self.root, name, 0)
    }

    pub fn seed_indexed(&self, name: &str, index: u64) -> u64 {
        mix(self.root, name, index.wrapping_add(1))
    }

    pub fn stream(&self, name: &str) -> Rng {
        Rng::seed_from_u64(self.seed(name))
    }

    pub fn stream_indexed(&self, name: &str, index: u64) -> Rng {
        Rng::seed_from_u64(self.seed_indexed(name, index))
    }
}
