use rand::Rng;

use super::Tensor;
use crate::scalar::Scalar;

/// Uniform samples in `[−bound, bound]`.
pub fn uniform<T: Scalar>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(rng.random_range(-bound..=bound))).collect();
    Tensor::from_vec(shape, data).expect("shape and data agree")
}

/// Weight matrix `[out × fan_in]` with the `1/√fan_in` bound.
pub fn fan_in<T: Scalar>(rng: &mut impl Rng, out: usize, fan_in: usize) -> Tensor<T> {
    uniform(rng, &[out, fan_in], 1.0 / (fan_in as f64).sqrt())
}
