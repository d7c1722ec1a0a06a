//! Seeded random streams.
//!
//! Every stochastic channel draws from ChaCha8 (`rand_chacha`), which is
//! specified bit-for-bit and portable across platforms. Normal variates come
//! from the Box-Muller transform on that stream, so the sequence depends on
//! nothing but the seed.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fixed offsets added to a run seed to obtain the seed of each channel.
/// Keeping channels apart means that enabling noise never shifts the
/// demand draws, and retraining a model never shifts the noise.
pub mod offsets {
    pub const DEMAND: u64 = 0;
    pub const NOISE: u64 = 1_000;
    pub const MODEL: u64 = 2_000;
    pub const IMPORTANCE: u64 = 3_000;
    pub const TUNING: u64 = 4_000;
}

pub fn derive_seed(run_seed: u64, offset: u64) -> u64 {
    run_seed.wrapping_add(offset)
}

#[derive(Debug, Clone)]
pub struct SimRng {
    inner: ChaCha8Rng,
    spare: Option<f64>,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn channel(run_seed: u64, offset: u64) -> Self {
        Self::new(derive_seed(run_seed, offset))
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal via Box-Muller; the second variate of each pair is cached.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 - U keeps the log argument in (0, 1].
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.standard_normal()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}
