//! Deterministic random stream shared by every seeded operation.
//!
//! SplitMix64 outputs, with bounded integers drawn by Lemire's
//! multiply-and-reject method so that results are unbiased and identical
//! across implementations.

use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_xoshiro::SplitMix64;

#[derive(Clone, Debug)]
pub struct KeyStream {
    inner: SplitMix64,
}

impl KeyStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, range)`. `range` must be nonzero.
    pub fn bounded(&mut self, range: u64) -> u64 {
        assert!(range > 0, "bounded draw over an empty range");
        let mut m = u128::from(self.next_u64()) * u128::from(range);
        let mut low = m as u64;
        if low < range {
            let threshold = range.wrapping_neg() % range;
            while low < threshold {
                m = u128::from(self.next_u64()) * u128::from(range);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform real in `[0, 1)` with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.unit()
    }

    pub fn normal(&mut self, std: f64) -> f64 {
        Normal::new(0.0, std)
            .expect("finite standard deviation")
            .sample(&mut self.inner)
    }

    /// Derives an independent child seed.
    pub fn fork(&mut self) -> u64 {
        self.next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_splitmix64() {
        // first outputs of splitmix64.c seeded with 1234567
        let mut s = KeyStream::new(1234567);
        assert_eq!(s.next_u64(), 6457827717110365317);
        assert_eq!(s.next_u64(), 3203168211198807973);
    }

    #[test]
    fn bounded_stays_in_range() {
        let mut s = KeyStream::new(3);
        for range in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(s.bounded(range) < range);
            }
        }
    }

    #[test]
    fn unit_in_half_open_interval() {
        let mut s = KeyStream::new(11);
        for _ in 0..1000 {
            let u = s.unit();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
