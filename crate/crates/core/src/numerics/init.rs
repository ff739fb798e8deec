//! Seeded parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::Tensor;

/// Embedding-style init: `U(−bound, bound)`.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid uniform bounds");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}

/// Projection init: `N(0, 1/fan_in)` where `fan_in = shape[0]`.
pub fn scaled_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let fan_in = shape.first().copied().unwrap_or(1).max(1);
    let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("valid normal");
    Tensor::from_fn(shape, |_| dist.sample(rng))
}
