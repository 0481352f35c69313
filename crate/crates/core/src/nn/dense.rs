use crate::error::{invalid, Error, Result};
use crate::nn::param::LayerParams;
use crate::tensor::{gemm, Scalar, Tensor};

/// Affine map `input[N,D] * weights[D,M] + bias[M]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, d) = input.dims2()?;
    let (wd, m) = weights.dims2()?;
    if wd != d || bias.shape() != [m] {
        return Err(invalid!(
            "dense: input [{n},{d}], weights {:?}, bias {:?}",
            weights.shape(),
            bias.shape()
        ));
    }
    let mut out = Tensor::zeros(&[n, m])?;
    for row in 0..n {
        out.outer_mut(row).copy_from_slice(bias.data());
    }
    gemm::nn(n, d, m, input.data(), weights.data(), out.data_mut(), true);
    Ok(out)
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = input.dims2()?;
    let (_, m) = weights.dims2()?;
    if grad_out.shape() != [n, m] {
        return Err(invalid!(
            "dense grad_out {:?}, expected [{n},{m}]",
            grad_out.shape()
        ));
    }
    let mut gw = Tensor::zeros(weights.shape())?;
    gemm::tn(d, n, m, input.data(), grad_out.data(), gw.data_mut(), false);
    let mut gb = Tensor::zeros(&[m])?;
    for row in 0..n {
        for (b, &g) in gb.data_mut().iter_mut().zip(grad_out.outer(row)) {
            *b += g;
        }
    }
    let mut gx = Tensor::zeros(&[n, d])?;
    gemm::nt(n, m, d, grad_out.data(), weights.data(), gx.data_mut(), false);
    Ok((gx, gw, gb))
}

/// Number of trainable values in a `d -> m` fully connected layer.
pub fn dense_param_count(d: usize, m: usize) -> usize {
    d * m + m
}

#[derive(Debug, Clone)]
pub struct Dense<T> {
    pub params: LayerParams<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let (_, m) = weights.dims2()?;
        if bias.shape() != [m] {
            return Err(invalid!("bias {:?} for {m} outputs", bias.shape()));
        }
        Ok(Dense {
            params: LayerParams::new(weights, bias),
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.params.weight.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.params.weight.value.shape()[1]
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(input, &self.params.weight.value, &self.params.bias.value)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.infer(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("dense backward without forward".into()))?;
        let (gx, gw, gb) = dense_backward(input, &self.params.weight.value, grad_out)?;
        self.params.weight.accumulate(gw.data())?;
        self.params.bias.accumulate(gb.data())?;
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weights_pass_input_through() {
        let x = Tensor::<f64>::from_vec(&[2, 3], vec![1., -2., 3., 0.5, 0., 7.]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let y = dense_forward(&x, &eye, &Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(dense_param_count(5184, 512), 2_654_720);
        assert_eq!(dense_param_count(2592, 81), 210_033);
        assert_eq!(dense_param_count(512, 81), 41_553);
        assert_eq!(dense_param_count(81, 1), 82);
    }

    #[test]
    fn mismatched_inner_dimension_is_rejected() {
        let x = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let w = Tensor::zeros(&[4, 2]).unwrap();
        let b = Tensor::zeros(&[2]).unwrap();
        assert!(matches!(dense_forward(&x, &w, &b), Err(Error::InvalidArgument(_))));
    }
}
