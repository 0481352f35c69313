use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A trainable tensor together with its gradient and Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub first_moment: Tensor<T>,
    pub second_moment: Tensor<T>,
    fresh: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let zeros = Tensor::zeros_like(&value);
        Param {
            grad: zeros.clone(),
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
            fresh: false,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Clears the gradient and marks it stale until the next backward pass.
    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
        self.fresh = false;
    }

    pub fn accumulate(&mut self, grad: &[T]) -> Result<()> {
        if grad.len() != self.grad.len() {
            return Err(Error::Contract(format!(
                "gradient of length {} for a parameter of length {}",
                grad.len(),
                self.grad.len()
            )));
        }
        for (g, &d) in self.grad.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
        self.fresh = true;
        Ok(())
    }

    /// Whether a backward pass has populated the gradient since the last update.
    pub fn has_fresh_grad(&self) -> bool {
        self.fresh
    }

    pub(crate) fn mark_consumed(&mut self) {
        self.fresh = false;
    }
}

/// Weight and bias of a static layer.
#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        LayerParams {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
}
