use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use super::matrix::DenseMatrix;

/// Seedable, explicitly advanced random stream.
///
/// Backed by ChaCha20, a counter-based generator, so identical seeds and call
/// sequences give identical streams on every platform.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    inner: ChaCha20Rng,
}

impl RngState {
    pub const ALGORITHM: &'static str = "chacha20";

    pub fn new(seed: u64) -> Self {
        RngState { seed, inner: ChaCha20Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream and advances this one.
    pub fn split(&mut self) -> RngState {
        let child_seed = self.inner.next_u64();
        RngState::new(child_seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `rows x cols` matrix of independent standard normal draws, row-major.
    pub fn standard_normal(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| self.normal())
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Convenience wrapper matching the free-function form used across the crate.
pub fn standard_normal(rng: &mut RngState, rows: usize, cols: usize) -> DenseMatrix {
    rng.standard_normal(rows, cols)
}
