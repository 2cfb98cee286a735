//! Portable seeded generator for sweep sampling.
//!
//! 64-bit linear congruential generator,
//! `state = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`,
//! advanced before every draw. A draw is
//! the high 32 bits of the new state divided by `2^32`, so it lies in
//! `[0, 1)`. The generator is seeded with the raw `u64` state. Any
//! implementation of these three lines reproduces the same sweep points.

const MULTIPLIER: u64 = 6364136223846793005;
const INCREMENT: u64 = 1442695040888963407;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        f64::from(self.next_u32()) / 4_294_967_296.0
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}
