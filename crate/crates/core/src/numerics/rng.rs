//! Deterministic random numbers.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`), a counter-based
//! stream cipher whose output is specified bit-for-bit and identical on every
//! platform. Independent sub-streams are obtained with [`Rng::fork`], which
//! selects a ChaCha stream id without advancing the parent. Normal variates
//! come from `rand_distr::StandardNormal` (ziggurat). Changing either of
//! these changes every seeded result in the crate.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Matrix;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
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

    /// A fresh generator on ChaCha stream `stream` for the same seed.
    pub fn fork(&self, stream: u64) -> Rng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream);
        Rng {
            seed: self.seed,
            inner,
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Fisher-Yates shuffle driven by this generator.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Standard-normal `rows × cols` matrix from a fresh generator seeded with `seed`.
pub fn rng_normal(seed: u64, rows: usize, cols: usize) -> Matrix {
    Rng::new(seed).normal_matrix(rows, cols)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        assert_eq!(rng_normal(7, 2, 2), rng_normal(7, 2, 2));
        assert_ne!(rng_normal(7, 2, 2), rng_normal(8, 2, 2));
    }

    #[test]
    fn forks_are_independent_of_parent_position() {
        let mut a = Rng::new(3);
        let b = Rng::new(3);
        a.normal();
        assert_eq!(a.fork(5).normal_matrix(3, 3), b.fork(5).normal_matrix(3, 3));
        assert_ne!(b.fork(5).normal_matrix(3, 3), b.fork(6).normal_matrix(3, 3));
    }

    #[test]
    fn large_sample_mean_is_near_zero() {
        let m = rng_normal(11, 1000, 1000);
        let mean = m.as_slice().iter().sum::<f64>() / m.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let var = m.as_slice().iter().map(|v| v * v).sum::<f64>() / m.len() as f64;
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = Rng::new(1).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
