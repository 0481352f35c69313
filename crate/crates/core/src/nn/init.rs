use rand::Rng;

use crate::error::Result;
use crate::rng::Rng as SeededRng;
use crate::tensor::{Scalar, Tensor};

/// Uniform fan-in initialization with standard deviation `gain / sqrt(fan_in)`.
pub fn fan_in_uniform<T: Scalar>(
    rng: &mut SeededRng,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Result<Tensor<T>> {
    let bound = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform<T: Scalar>(rng: &mut SeededRng, shape: &[usize], bound: f64) -> Result<Tensor<T>> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect();
    Tensor::from_vec(shape, data)
}

/// Gain used for the layer feeding an activation of the given kind.
pub fn gain_for(act: crate::nn::Activation) -> f64 {
    use crate::nn::Activation::*;
    match act {
        Relu | LeakyRelu { .. } => std::f64::consts::SQRT_2,
        Identity | Sigmoid | Tanh => 1.0,
    }
}
