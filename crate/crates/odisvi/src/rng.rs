//! Splittable, seedable random streams.
//!
//! Every stochastic operation in this crate takes a [`RandomStream`]
//! explicitly. Streams are backed by a counter-based generator (ChaCha12),
//! so a fixed seed reproduces the exact draw sequence, and independent
//! child streams can be derived for parallel work without sharing state.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn expand_key(words: [u64; 4]) -> [u8; 32] {
    let mut key = [0u8; 32];
    for (i, w) in words.iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
    }
    key
}

fn derive_words(parent: &[u8; 32], nonce: u64, index: u64) -> [u64; 4] {
    let mut state = nonce ^ GOLDEN.wrapping_mul(index.wrapping_add(1));
    let mut words = [0u64; 4];
    for (i, chunk) in parent.chunks_exact(8).enumerate() {
        let w = u64::from_le_bytes(chunk.try_into().unwrap());
        state ^= w.rotate_left((i as u32 + 1) * 13);
        words[i] = splitmix64(&mut state) ^ index.wrapping_mul(GOLDEN);
    }
    words
}

/// A seedable stream of pseudo-random bytes with deterministic splitting.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha12Rng,
}

impl RandomStream {
    /// Stream derived deterministically from a 64-bit seed.
    pub fn from_seed(seed: u64) -> Self {
        let mut state = seed;
        let words = [
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
            splitmix64(&mut state),
        ];
        RandomStream {
            rng: ChaCha12Rng::from_seed(expand_key(words)),
        }
    }

    /// Child stream that depends only on this stream's seed and `index`,
    /// not on how much of the parent has been consumed.
    pub fn child(&self, index: u64) -> Self {
        let words = derive_words(&self.rng.get_seed(), 0, index);
        RandomStream {
            rng: ChaCha12Rng::from_seed(expand_key(words)),
        }
    }

    /// Consumes one draw from this stream and returns a forker that can
    /// hand out any number of mutually independent child streams. Distinct
    /// calls yield unrelated families of children.
    pub fn fork(&mut self) -> StreamForker {
        StreamForker {
            key: self.rng.get_seed(),
            nonce: self.rng.next_u64(),
        }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}

/// Factory for independent child streams; cheap to copy across threads.
#[derive(Debug, Clone, Copy)]
pub struct StreamForker {
    key: [u8; 32],
    nonce: u64,
}

impl StreamForker {
    pub fn stream(&self, index: u64) -> RandomStream {
        let words = derive_words(&self.key, self.nonce, index);
        RandomStream {
            rng: ChaCha12Rng::from_seed(expand_key(words)),
        }
    }
}
