//! Deterministic sample generator for construction-time consistency probes.
//!
//! Structural checks (A = QM, gradients vs. finite differences, ...) need a
//! handful of generic states. SplitMix64 keeps them reproducible without
//! pulling an RNG dependency into the core.

use alloc::vec::Vec;
use nalgebra::DVector;

pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub(crate) fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform draw in [-1, 1).
    pub(crate) fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }

    pub(crate) fn vector(&mut self, dim: usize, scale: f64) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| scale * self.next_unit()))
    }

    pub(crate) fn vectors(&mut self, count: usize, dim: usize, scale: f64) -> Vec<DVector<f64>> {
        (0..count).map(|_| self.vector(dim, scale)).collect()
    }
}
