//! Counter-based random numbers.
//!
//! A stream is identified by a 64-bit seed; the `counter` is the index of
//! the next draw. Each draw is a pure function of `(seed, counter)`, so any
//! position in a stream can be reproduced or resumed exactly, and
//! independent sub-streams are derived with [`RngState::split`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let key = mix64(self.seed ^ GOLDEN);
        let v = mix64(key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[lo, hi)`. Panics if the range is empty.
    pub fn gen_range(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo < hi, "empty range {lo}..{hi}");
        lo + (self.next_f64() * (hi - lo) as f64) as usize
    }

    /// Standard normal draw (Box-Muller, cosine branch).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Independent stream keyed by `stream`; does not advance `self`.
    pub fn split(&self, stream: u64) -> RngState {
        let a = mix64(self.seed.wrapping_add(GOLDEN).wrapping_add(self.counter));
        let b = mix64(stream.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03);
        RngState::new(mix64(a ^ b))
    }

    pub fn uniform(&mut self, shape: impl Into<Shape>, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "uniform needs lo < hi, got [{lo}, {hi})"
            )));
        }
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let v = lo + (hi - lo) * self.next_f64();
                // rounding can land exactly on hi for wide intervals
                if v >= hi {
                    lo
                } else {
                    v
                }
            })
            .collect();
        Tensor::from_vec(shape, data)
    }

    pub fn normal(&mut self, shape: impl Into<Shape>, mean: f64, std: f64) -> Result<Tensor> {
        if !(std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "normal needs std >= 0, got {std}"
            )));
        }
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| mean + std * self.next_normal())
            .collect();
        Tensor::from_vec(shape, data)
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.gen_range(0, i + 1);
            p.swap(i, j);
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_is_reproducible_and_in_range() {
        let a = RngState::new(42).uniform([1, 1, 2, 2], 0.0, 1.0).unwrap();
        let b = RngState::new(42).uniform([1, 1, 2, 2], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| (0.0..1.0).contains(&v)));
    }

    #[test]
    fn uniform_rejects_empty_interval() {
        assert!(RngState::new(0).uniform([1, 1, 2, 2], 0.5, 0.5).is_err());
    }

    #[test]
    fn seeds_give_different_streams() {
        let a = RngState::new(42).uniform([1, 1, 8, 8], 0.0, 1.0).unwrap();
        let b = RngState::new(43).uniform([1, 1, 8, 8], 0.0, 1.0).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn counter_advances_per_draw() {
        let mut r = RngState::new(7);
        r.uniform([1, 1, 3, 3], 0.0, 1.0).unwrap();
        assert_eq!(r.counter, 9);
        // resuming mid-stream reproduces the tail
        let mut full = RngState::new(7);
        let all: Vec<u64> = (0..12).map(|_| full.next_u64()).collect();
        let mut tail = RngState { seed: 7, counter: 9 };
        assert_eq!(tail.next_u64(), all[9]);
    }

    #[test]
    fn normal_zero_std_is_constant() {
        let t = RngState::new(1).normal([1, 1, 3, 3], 3.0, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 3.0));
        assert!(RngState::new(1).normal([1, 1, 1, 1], 0.0, -1.0).is_err());
        assert_eq!(
            RngState::new(1).normal([2, 3, 4, 4], 0.0, 1.0).unwrap().numel(),
            96
        );
    }

    #[test]
    fn normal_moments() {
        let t = RngState::new(2024)
            .normal([1, 1, 1, 100_000], 0.0, 1.0)
            .unwrap();
        let mean = t.mean();
        let var = t.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn split_streams_are_independent_of_parent_draws() {
        let parent = RngState::new(5);
        let s1 = parent.split(1);
        let s2 = parent.split(2);
        assert_ne!(s1, s2);
        assert_eq!(parent.split(1), s1);
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut p = RngState::new(3).permutation(50);
        p.sort_unstable();
        assert_eq!(p, (0..50).collect::<Vec<_>>());
    }
}
