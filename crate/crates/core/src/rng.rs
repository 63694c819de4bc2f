//! Counter-based random streams.
//!
//! Every observation draw uses its own stream keyed by `(seed, vertex, t)`,
//! so a trace gives the same values no matter which order or thread queries
//! it. Streams are SplitMix64 sequences started from a mixed key.

use rand_core::{impls, RngCore};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer. A bijection on `u64` with good avalanche.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a sequence of words into one seed. Order matters.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(master ^ 0x5eed), |h, &p| mix64(h.wrapping_add(GOLDEN) ^ mix64(p)))
}

/// A SplitMix64 stream. Cheap to construct, so one is made per draw site.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { state: mix64(key) }
    }

    /// Stream for the observation of the vertex with `vertex_key` at time `t`.
    pub fn for_site(seed: u64, vertex_key: u64, t: u32) -> Self {
        Self::new(derive_seed(seed, &[vertex_key, u64::from(t)]))
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}
