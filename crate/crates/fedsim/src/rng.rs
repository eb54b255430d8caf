//! Deterministic random streams for the simulation.
//!
//! Every worker owns a private stream derived from the master seed and its
//! client index; one extra shared stream drives global coins (communication
//! schedule, global anchor refresh). Draws on one stream never affect
//! another, so permuting the evaluation order of clients within an
//! iteration leaves every drawn quantity bit-identical.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Stream labels baked into the derived seed so distinct roles can never
/// collide even for the same client index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// Per-worker draws (component indices, gradient noise, anchor coins).
    Worker(u32),
    /// Global coins shared by all workers.
    SharedCoin,
    /// Auxiliary streams for verification redraws, keyed by draw index.
    Probe(u32),
}

impl StreamKind {
    fn tag(self) -> (u8, u32) {
        match self {
            StreamKind::Worker(i) => (1, i),
            StreamKind::SharedCoin => (2, 0),
            StreamKind::Probe(i) => (3, i),
        }
    }
}

/// A deterministic stream keyed by `(master_seed, kind)`.
#[derive(Debug, Clone)]
pub struct StreamRng {
    inner: ChaCha12Rng,
}

impl StreamRng {
    pub fn new(master_seed: u64, kind: StreamKind) -> Self {
        let (tag, idx) = kind.tag();
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&master_seed.to_le_bytes());
        seed[8] = tag;
        seed[9..13].copy_from_slice(&idx.to_le_bytes());
        // fill the tail so distinct masters decorrelate quickly
        let spread = master_seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(0xd1b5_4a32_d192_ed03u64.wrapping_mul(u64::from(idx) + 1));
        seed[16..24].copy_from_slice(&spread.to_le_bytes());
        StreamRng {
            inner: ChaCha12Rng::from_seed(seed),
        }
    }

    #[inline]
    pub fn coin(&mut self, p: f64) -> bool {
        self.inner.gen::<f64>() < p
    }

    #[inline]
    pub fn uniform_index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for o in out.iter_mut() {
            *o = self.standard_normal();
        }
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
