//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::tensor::{Real, Tensor};

/// Normal(0, std) resampled until it falls within two standard deviations.
pub fn truncated_normal<T: Real>(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor<T> {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break T::from_real(v);
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Uniform in `±sqrt(6 / fan_in)`.
pub fn fan_in_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_real(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("shape matches")
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))` for a `[fan_in, fan_out]` kernel.
pub fn glorot_uniform<T: Real>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let fans = shape[0] + shape[1..].iter().product::<usize>();
    fan_in_uniform(shape, fans, rng)
}
