//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit [`Rng`]; there is no global
//! generator. Parallel work never shares a stream: each worker gets a child
//! derived from the parent seed and a key, so the samples a task sees depend
//! only on `(seed, key)` and not on scheduling.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Vector;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `key`. Independent of how much of `self` has
    /// been consumed.
    pub fn derive(&self, key: u64) -> Rng {
        Rng::new(splitmix64(self.seed ^ splitmix64(key.wrapping_add(1))))
    }

    /// Uniform on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u: f64 = self.inner.random();
        lo + (hi - lo) * u
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        Vector::from_fn(dim, |_, _| self.standard_normal())
    }

    /// Uniform sample from the closed unit ball in `R^dim`: a Gaussian
    /// direction scaled by `U^(1/dim)`.
    pub fn unit_ball(&mut self, dim: usize) -> Vector {
        loop {
            let dir = self.normal_vector(dim);
            let norm = dir.norm();
            if norm > 1e-300 {
                let radius = self.uniform(0.0, 1.0).powf(1.0 / dim as f64);
                return dir * (radius / norm);
            }
        }
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
