//! Named, splittable random streams.
//!
//! Each consumer (init, data order, dropout, synthesis) draws from its own
//! stream derived from the run seed, a stream name and an index, so any stream
//! can be re-created at any point without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Streams {
    pub seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn stream(&self, name: &str, index: u64) -> StreamRng {
        ChaCha8Rng::seed_from_u64(self.derive(name, index))
    }

    pub fn derive(&self, name: &str, index: u64) -> u64 {
        // FNV-1a over the name, then splitmix64 finalization of the combination.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        splitmix(splitmix(self.seed ^ h).wrapping_add(index))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
