//! Seedable, splittable random source shared by every stochastic routine.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// ChaCha8 stream. `split` derives an independent child stream, so callers
/// can hand out generators without their draw counts interfering.
#[derive(Debug, Clone)]
pub struct CapRng {
    inner: ChaCha8Rng,
    seed: u64,
}

impl CapRng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// Child generator identified by `stream`; depends only on the parent
    /// seed and `stream`, never on how many draws the parent has made.
    pub fn split(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        Self {
            inner,
            seed: self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15),
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn sign(&mut self) -> f64 {
        if self.inner.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}
