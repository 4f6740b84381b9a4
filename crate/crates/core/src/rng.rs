//! Counter-based, splittable random streams.
//!
//! Every stream is keyed by `(seed, purpose, index)`. The key is hashed with
//! SplitMix64 into a ChaCha8 seed, so streams for different purposes (or
//! different samples) never share state and can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags used by the library. Values are part of the reproducibility
/// contract and must not change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Dictionary = 1,
    Codes = 2,
    ModelInit = 3,
    Shuffle = 4,
    Split = 5,
    PrefixDraw = 6,
    Custom = 99,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub purpose: Purpose,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, purpose: Purpose, index: u64) -> Self {
        Self {
            seed,
            purpose,
            index,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut state = self.seed ^ 0x6f73_6165_5f72_6e67;
        let a = splitmix64(&mut state);
        state ^= (self.purpose as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let b = splitmix64(&mut state);
        state ^= self.index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        let c = splitmix64(&mut state);
        let d = splitmix64(&mut state);
        let mut bytes = [0u8; 32];
        for (chunk, word) in bytes.chunks_exact_mut(8).zip([a, b, c, d]) {
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(bytes)
    }
}

/// Shorthand for `StreamKey::new(seed, purpose, index).rng()`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    StreamKey::new(seed, purpose, index).rng()
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
