//! Per-channel batch normalization over `(N, H, W)`.

use crate::error::{invalid, Error, Result};
use crate::nn::param::Param;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running mean/variance used at inference time.
#[derive(Debug, Clone)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: f64,
    pub initialized: bool,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(channels: usize, momentum: f64) -> Result<Self> {
        Ok(RunningStats {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], T::one())?,
            momentum,
            initialized: false,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Normalizes each channel of `input[N,C,H,W]` and applies `gamma * x_hat + beta`.
///
/// Train mode uses the batch statistics and folds them into `running` with the configured
/// momentum (the very first batch initializes the running statistics directly).
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: &mut RunningStats<T>,
    eps: f64,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] || running.mean.shape() != [c] {
        return Err(invalid!("batch norm parameters do not match {c} channels"));
    }
    let plane = h * w;
    let count = n * plane;
    let x = input.data();
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(invalid!(
                    "train-mode batch norm needs at least 2 values per channel, got {count}"
                ));
            }
            let mut means = Vec::with_capacity(c);
            let mut vars = Vec::with_capacity(c);
            for ch in 0..c {
                let values = (0..n).flat_map(|b| {
                    let base = (b * c + ch) * plane;
                    x[base..base + plane].iter().map(|v| v.as_f64())
                });
                let mean = values.clone().sum::<f64>() / count as f64;
                let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
                means.push(mean);
                vars.push(var);
            }
            let m = running.momentum;
            let unbias = count as f64 / (count - 1) as f64;
            for ch in 0..c {
                let rm = &mut running.mean.data_mut()[ch];
                *rm = if running.initialized {
                    T::from_f64_lossy(m * rm.as_f64() + (1.0 - m) * means[ch])
                } else {
                    T::from_f64_lossy(means[ch])
                };
                let rv = &mut running.var.data_mut()[ch];
                *rv = if running.initialized {
                    T::from_f64_lossy(m * rv.as_f64() + (1.0 - m) * vars[ch] * unbias)
                } else {
                    T::from_f64_lossy(vars[ch] * unbias)
                };
            }
            running.initialized = true;
            (means, vars)
        }
        Mode::Infer => {
            if !running.initialized {
                return Err(Error::UninitializedStatistics);
            }
            (
                running.mean.data().iter().map(|v| v.as_f64()).collect(),
                running.var.data().iter().map(|v| v.as_f64()).collect(),
            )
        }
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + eps).sqrt()))
        .collect();
    let mut normalized = Tensor::zeros(input.shape())?;
    let mut out = Tensor::zeros(input.shape())?;
    {
        let xh = normalized.data_mut();
        let o = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * plane;
                let mu = T::from_f64_lossy(mean[ch]);
                let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
                for i in base..base + plane {
                    let v = (x[i] - mu) * inv_std[ch];
                    xh[i] = v;
                    o[i] = gm * v + bt;
                }
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    grad_out.same_shape(&cache.normalized, "batch norm grad_out")?;
    let (n, c, h, w) = grad_out.dims4()?;
    let plane = h * w;
    let count = T::from_usize(n * plane).expect("count fits");
    let g = grad_out.data();
    let xh = cache.normalized.data();
    let mut grad_gamma = vec![T::zero(); c];
    let mut grad_beta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            for i in base..base + plane {
                grad_gamma[ch] += g[i] * xh[i];
                grad_beta[ch] += g[i];
            }
        }
    }
    let mut grad = Tensor::zeros(grad_out.shape())?;
    let gx = grad.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let scale = gamma.data()[ch] * cache.inv_std[ch];
            for i in base..base + plane {
                gx[i] = match cache.mode {
                    Mode::Infer => scale * g[i],
                    Mode::Train => {
                        scale * (g[i] - (grad_beta[ch] + xh[i] * grad_gamma[ch]) / count)
                    }
                };
            }
        }
    }
    Ok((grad, grad_gamma, grad_beta))
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running: RunningStats<T>,
    pub eps: f64,
    cache: Option<BatchNormCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], T::one())?),
            beta: Param::new(Tensor::zeros(&[channels])?),
            running: RunningStats::new(channels, Self::DEFAULT_MOMENTUM)?,
            eps: Self::DEFAULT_EPS,
            cache: None,
        })
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut running = self.running.clone();
        Ok(batchnorm_forward(
            input,
            &self.gamma.value,
            &self.beta.value,
            &mut running,
            self.eps,
            Mode::Infer,
        )?
        .0)
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, cache) = batchnorm_forward(
            input,
            &self.gamma.value,
            &self.beta.value,
            &mut self.running,
            self.eps,
            mode,
        )?;
        self.cache = Some(cache);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("batch norm backward without forward".into()))?;
        let (gx, gg, gb) = batchnorm_backward(cache, &self.gamma.value, grad_out)?;
        self.gamma.accumulate(&gg)?;
        self.beta.accumulate(&gb)?;
        Ok(gx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64, offset: f64, spread: f64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|_| offset + spread * rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn standardized_input_passes_through() {
        // one channel, values -1, 1 repeated: mean 0, variance 1
        let x = Tensor::<f64>::from_vec(&[2, 1, 1, 2], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let mut bn = BatchNorm2d::new(1).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5 + 1e-6);
        }
    }

    #[test]
    fn zero_gamma_gives_constant_beta() {
        let x = random(&[3, 2, 4, 4], 5, 0.3, 2.0);
        let mut bn = BatchNorm2d::new(2).unwrap();
        bn.gamma.value.fill(0.0);
        bn.beta.value = Tensor::from_vec(&[2], vec![0.25, -4.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for b in 0..3 {
            let s = y.outer(b);
            assert!(s[..16].iter().all(|&v| v == 0.25));
            assert!(s[16..].iter().all(|&v| v == -4.0));
        }
    }

    #[test]
    fn train_output_statistics() {
        let x = random(&[4, 3, 5, 5], 9, 3.0, 1.5);
        let mut bn = BatchNorm2d::new(3).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        let plane = 25;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.outer(b)[ch * plane..(ch + 1) * plane].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            // the same channel of the input, to recover the eps adjustment
            let xs: Vec<f64> = (0..4)
                .flat_map(|b| x.outer(b)[ch * plane..(ch + 1) * plane].to_vec())
                .collect();
            let xm = xs.iter().sum::<f64>() / xs.len() as f64;
            let xv = xs.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / xs.len() as f64;
            assert!(mean.abs() < 1e-10, "mean {mean}");
            assert!((var - xv / (xv + 1e-5)).abs() < 1e-6, "var {var}");
        }
    }

    #[test]
    fn infer_before_training_is_an_error() {
        let bn = BatchNorm2d::<f32>::new(2).unwrap();
        let x = Tensor::zeros(&[1, 2, 2, 2]).unwrap();
        assert!(matches!(bn.infer(&x), Err(Error::UninitializedStatistics)));
    }

    #[test]
    fn first_batch_initializes_running_stats() {
        let x = random(&[2, 1, 3, 3], 2, 5.0, 1.0);
        let mut bn = BatchNorm2d::new(1).unwrap();
        bn.forward(&x, Mode::Train).unwrap();
        let mean = x.data().iter().sum::<f64>() / 18.0;
        assert!((bn.running.mean.data()[0] - mean).abs() < 1e-12);
        let y = bn.infer(&x).unwrap();
        assert!(y.is_finite());
    }

    #[test]
    fn train_mode_needs_two_values() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 1]).unwrap();
        let mut bn = BatchNorm2d::new(1).unwrap();
        assert!(bn.forward(&x, Mode::Train).is_err());
    }
}
