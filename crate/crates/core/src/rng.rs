//! Seeded random streams shared by every randomized routine.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut SeededRng) -> f64 {
    rng.sample(StandardNormal)
}

/// Circular complex Gaussian with total variance `var` (each part `var / 2`).
pub fn complex_normal(rng: &mut SeededRng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    Complex64::new(s * normal(rng), s * normal(rng))
}
