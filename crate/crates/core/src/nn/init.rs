//! Weight initialization helpers.

use ndarray::{Array, Dimension, ShapeBuilder};
use rand_distr::{Distribution, Normal};

use crate::rng::Rng;

/// Kaiming-style normal init scaled by fan-in: `N(0, sqrt(2 / fan_in))`.
pub fn kaiming_normal<Sh, D>(shape: Sh, fan_in: usize, rng: &mut Rng) -> Array<f64, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    Array::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// Uniform init in `[-limit, limit]` with `limit = 1/sqrt(fan_in)`.
pub fn uniform_fan_in<Sh, D>(shape: Sh, fan_in: usize, rng: &mut Rng) -> Array<f64, D>
where
    D: Dimension,
    Sh: ShapeBuilder<Dim = D>,
{
    use rand::Rng as _;
    let limit = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array::from_shape_simple_fn(shape, || rng.random_range(-limit..limit))
}
