//! Named, independent RNG streams derived from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream factory: `stream("agent3/explore")` always yields the same
/// generator for the same master seed, and distinct labels yield independent
/// generators.
#[derive(Debug, Clone, Copy)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Streams {
        Streams { master }
    }

    pub fn stream(&self, label: &str) -> ChaCha8Rng {
        let mut state = self.master ^ fnv1a64(label.as_bytes());
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
