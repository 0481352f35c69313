use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Output extent of a 2x2, stride-2 ceil-mode pooling window.
pub fn pooled_extent(n: usize) -> usize {
    n.div_ceil(2)
}

/// 2x2 / stride-2 max pooling in ceil mode: border windows simply cover fewer cells.
///
/// Returns the pooled tensor and, per output element, the flat index of the winning input.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let mut out = Tensor::zeros(&[n, c, oh, ow])?;
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    let o = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for yy in 2 * y..(2 * y + 2).min(h) {
                    for xx in 2 * xo..(2 * xo + 2).min(w) {
                        let idx = base + yy * w + xx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                o[k] = x[best];
                argmax.push(best);
                k += 1;
            }
        }
    }
    Ok((out, argmax))
}

/// Routes each output gradient to the input position that won the forward max.
pub fn maxpool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return Err(Error::InvalidArgument(format!(
            "grad_out has {} elements, pooling produced {}",
            grad_out.len(),
            argmax.len()
        )));
    }
    let mut grad = Tensor::zeros(input_shape)?;
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(grad_out.data()) {
        g[idx] += d;
    }
    Ok(grad)
}

#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { cache: None }
    }

    pub fn infer<T: Scalar>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(maxpool2_forward(input)?.0)
    }

    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, argmax) = maxpool2_forward(input)?;
        self.cache = Some((input.shape().to_vec(), argmax));
        Ok(out)
    }

    pub fn backward<T: Scalar>(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (shape, argmax) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("maxpool backward without forward".into()))?;
        maxpool2_backward(shape, argmax, grad_out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_arithmetic() {
        assert_eq!(pooled_extent(33), 17);
        assert_eq!(pooled_extent(17), 9);
        assert_eq!(pooled_extent(9), 5);
        assert_eq!(pooled_extent(1), 1);
        let x = Tensor::<f32>::zeros(&[1, 2, 33, 17]).unwrap();
        let (y, _) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 2, 17, 9]);
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::full(&[2, 3, 5, 5], 2.5).unwrap();
        let (y, _) = maxpool2_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn picks_window_max_and_routes_gradient() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 3, 3], vec![1., 5., 2., 3., 4., 9., 8., 7., 6.]).unwrap();
        let (y, arg) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[5., 9., 8., 6.]);
        let g = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let gx = maxpool2_backward(x.shape(), &arg, &g).unwrap();
        assert_eq!(gx.data(), &[0., 1., 0., 0., 0., 2., 3., 0., 4.]);
    }
}
