//! Keyed random streams.
//!
//! Every random draw in a sweep comes from a ChaCha8 generator whose seed is a
//! hash of `(root seed, key...)`. A block that updates independent indices in
//! parallel asks for one substream per index, so the draws do not depend on
//! the number of worker threads or the order in which tasks run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Root of a family of independent, reproducible random substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn mix(&self, keys: &[u64]) -> u64 {
        let mut h = splitmix64(self.seed);
        for (pos, &k) in keys.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(k.wrapping_add((pos as u64 + 1).wrapping_mul(GOLDEN))));
        }
        h
    }

    /// A derived root, used to hand a whole subtree of streams to a sub-task.
    pub fn child(&self, keys: &[u64]) -> RngStream {
        RngStream {
            seed: self.mix(keys),
        }
    }

    /// Generator for the substream identified by `keys`.
    pub fn substream(&self, keys: &[u64]) -> ChaCha8Rng {
        let mut state = self.mix(keys);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
