//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`SeededRng`]: a ChaCha8 stream
//! keyed by `seed_from_u64`, with Gaussian samples from the ziggurat sampler
//! of `rand_distr`. Both are pure integer/IEEE-754 arithmetic, so a given seed
//! yields the same numbers on every platform.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Derives an independent child stream, e.g. one per worker or per trial.
    pub fn fork(&mut self, salt: u64) -> Self {
        let base: u64 = self.0.random();
        Self::new(base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || std * self.normal())
    }

    pub fn vector(&mut self, len: usize, std: f64) -> Array1<f64> {
        Array1::from_shape_simple_fn(len, || std * self.normal())
    }

    /// A random row-stochastic matrix with strictly positive entries.
    pub fn stochastic(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let mut m = Array2::from_shape_simple_fn((rows, cols), || self.uniform() + 1e-3);
        for mut row in m.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        m
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
