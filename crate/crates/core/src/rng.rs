//! Seeded random stream shared by the scenario generator, perturbations,
//! parameter initialization and shuffling.
//!
//! The generator is SplitMix64 (state `x`, increment `0x9e3779b97f4a7c15`,
//! output mix `z = (z ^ z>>30) * 0xbf58476d1ce4e5b9; z = (z ^ z>>27) *
//! 0x94d049bb133111eb; z ^ z>>31`), seeded by setting `x = seed`. Derived
//! draws are:
//!
//! * uniform `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! * uniform `[lo, hi)`: `lo + (hi - lo) * u`
//! * standard normal: Box-Muller on two uniforms,
//!   `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, one value per call
//! * integer below `n`: `next_u64() % n`
//!
//! These fixed transforms make any scenario reproducible from its seed in
//! any language.

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: SplitMix64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { inner: SplitMix64::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.unit();
        let u2 = self.unit();
        (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    /// Fisher-Yates shuffle driven by [`SeededRng::below`].
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of splitmix64.c seeded with 0
        let mut rng = SeededRng::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn draws_in_range() {
        let mut rng = SeededRng::new(3);
        for _ in 0..1000 {
            let u = rng.unit();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.normal().is_finite());
        }
    }
}
