//! Keyed random streams.
//!
//! Every draw in the simulator comes from a ChaCha8 stream whose seed is a
//! hash of `(master seed, replication, index a, index b, purpose)`. Streams
//! never overlap between replications or cells, so replications can run in
//! any order or on any number of threads and still produce identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Joint copula draw for the group effect and the scale parameter.
    GroupCopula = 1,
    Loading = 2,
    TimeEffect = 3,
    Factor = 4,
    Increment = 5,
    Noise = 6,
    MetaSeed = 7,
}

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(words: &[u64]) -> [u8; 32] {
    let mut state = 0x6A09_E667_F3BC_C909u64;
    for &w in words {
        state ^= w;
        state = splitmix64(&mut state);
    }
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    seed
}

/// Factory for keyed streams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream for `(replication, a, b, purpose)`.
    pub fn stream(&self, replication: u64, a: u64, b: u64, purpose: Purpose) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(mix(&[self.seed, replication, a, b, purpose as u64]))
    }

    /// Derived master seed for the `index`-th child (e.g. meta-replications).
    pub fn child_seed(&self, index: u64) -> u64 {
        let bytes = mix(&[self.seed, index, 0, 0, Purpose::MetaSeed as u64]);
        u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}
