use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
}

impl Activation {
    pub const LEAKY_SLOPE: f64 = 0.01;

    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: Self::LEAKY_SLOPE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Activation::LeakyRelu { slope } = *self {
            if !(slope > 0.0 && slope < 1.0) {
                return Err(invalid!("leaky ReLU slope {slope} outside (0, 1)"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn apply<T: Scalar>(&self, x: T) -> T {
        match *self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64_lossy(slope)
                }
            }
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x` and the output `y`.
    #[inline]
    pub fn derivative<T: Scalar>(&self, x: T, y: T) -> T {
        match *self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Tanh => T::one() - y * y,
        }
    }
}

/// Elementwise activation.
pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Tensor<T> {
    input.map(|v| kind.apply(v))
}

pub fn activation_backward<T: Scalar>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
    kind: Activation,
) -> Result<Tensor<T>> {
    grad_out.same_shape(input, "activation grad_out")?;
    if kind == Activation::Identity {
        return Ok(grad_out.clone());
    }
    Tensor::from_vec(
        input.shape(),
        input
            .data()
            .iter()
            .zip(output.data())
            .zip(grad_out.data())
            .map(|((&x, &y), &g)| g * kind.derivative(x, y))
            .collect(),
    )
}

#[derive(Debug, Clone)]
pub struct ActivationLayer<T> {
    pub kind: Activation,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ActivationLayer<T> {
    pub fn new(kind: Activation) -> Result<Self> {
        kind.validate()?;
        Ok(ActivationLayer { kind, cache: None })
    }

    pub fn infer(&self, input: &Tensor<T>) -> Tensor<T> {
        activation(input, self.kind)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Tensor<T> {
        let out = activation(input, self.kind);
        self.cache = Some((input.clone(), out.clone()));
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (x, y) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("activation backward without forward".into()))?;
        activation_backward(x, y, grad_out, self.kind)
    }
}
