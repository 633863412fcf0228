//! Seeded weight initialization.

use ndarray::{Array, Dimension, IntoDimension};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// He-normal initialization: N(0, sqrt(2 / fan_in)).
pub fn kaiming_normal<D: Dimension, Sh: IntoDimension<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<f32, D> {
    let std = (2.0 / fan_in as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("valid std");
    Array::from_shape_simple_fn(shape, || dist.sample(rng))
}

/// Uniform in [-bound, bound], the usual bias init with bound = 1/sqrt(fan_in).
pub fn uniform_fan<D: Dimension, Sh: IntoDimension<Dim = D>>(
    shape: Sh,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) -> Array<f32, D> {
    let bound = 1.0 / (fan_in as f32).sqrt();
    Array::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
}
