//! Seeded random numbers.
//!
//! All randomness in the crate flows through [`Rng`], a ChaCha8 stream cipher
//! generator (`rand_chacha::ChaCha8Rng`) seeded from a single `u64` via
//! `SeedableRng::seed_from_u64`. ChaCha8 is counter-based and platform
//! independent, so a given seed yields the same weights, masks and images on
//! every machine. Gaussian samples use `rand_distr::StandardNormal`.

use crate::tensor::Tensor;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.random()
    }

    /// Uniform sample from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.0.random()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.0.random_range(0..n)
    }

    pub fn normal_tensor(&mut self, dims: &[usize], std: f64) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| self.normal() * std).collect();
        Tensor::from_vec(dims, data).expect("valid dims")
    }

    pub fn uniform_tensor(&mut self, dims: &[usize], lo: f64, hi: f64) -> Tensor {
        let n = dims.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * self.uniform()).collect();
        Tensor::from_vec(dims, data).expect("valid dims")
    }
}
