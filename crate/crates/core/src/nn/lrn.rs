//! Cross-channel local response normalization.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnConfig {
    pub k: f64,
    pub size: usize,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LrnConfig {
    fn default() -> Self {
        LrnConfig {
            k: 2.0,
            size: 5,
            alpha: 1e-4,
            beta: 0.75,
        }
    }
}

impl LrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size % 2 == 0 || self.alpha <= 0.0 || self.beta <= 0.0 || self.k <= 0.0 {
            return Err(invalid!(
                "LRN needs odd size and positive k/alpha/beta, got {self:?}"
            ));
        }
        Ok(())
    }
}

/// Per-element denominators base `k + alpha/n * sum of squares over the channel window`.
fn window_scale<T: Scalar>(input: &Tensor<T>, cfg: &LrnConfig) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let half = cfg.size / 2;
    let k = T::from_f64_lossy(cfg.k);
    let a = T::from_f64_lossy(cfg.alpha / cfg.size as f64);
    let sq: Vec<T> = input.data().iter().map(|&v| v * v).collect();
    let mut scale = Tensor::zeros(input.shape())?;
    let s = scale.data_mut();
    for b in 0..n {
        let base = b * c * plane;
        for ch in 0..c {
            let dst = &mut s[base + ch * plane..base + (ch + 1) * plane];
            for cc in ch.saturating_sub(half)..=(ch + half).min(c - 1) {
                let src = &sq[base + cc * plane..base + (cc + 1) * plane];
                dst.iter_mut().zip(src).for_each(|(d, &v)| *d += v);
            }
            dst.iter_mut().for_each(|d| *d = k + a * *d);
        }
    }
    Ok(scale)
}

/// `s^-beta`, with a square-root path for the usual beta of 0.75.
fn pow_neg<T: Scalar>(s: T, beta: f64) -> T {
    if beta == 0.75 {
        let r = s.sqrt();
        (r * r.sqrt()).recip()
    } else {
        s.powf(T::from_f64_lossy(-beta))
    }
}

/// `out[c] = in[c] / (k + alpha/n * sum_{c' in window(c)} in[c']^2)^beta`
pub fn lrn_forward<T: Scalar>(input: &Tensor<T>, cfg: &LrnConfig) -> Result<Tensor<T>> {
    Ok(lrn_forward_cached(input, cfg)?.0)
}

fn lrn_forward_cached<T: Scalar>(
    input: &Tensor<T>,
    cfg: &LrnConfig,
) -> Result<(Tensor<T>, Tensor<T>)> {
    cfg.validate()?;
    let scale = window_scale(input, cfg)?;
    let out = Tensor::from_vec(
        input.shape(),
        input
            .data()
            .iter()
            .zip(scale.data())
            .map(|(&x, &s)| x * pow_neg(s, cfg.beta))
            .collect(),
    )?;
    Ok((out, scale))
}

pub fn lrn_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
    cfg: &LrnConfig,
) -> Result<Tensor<T>> {
    grad_out.same_shape(input, "lrn grad_out")?;
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let half = cfg.size / 2;
    let coef = T::from_f64_lossy(2.0 * cfg.alpha * cfg.beta / cfg.size as f64);
    let x = input.data();
    let s = scale.data();
    let g = grad_out.data();
    let inv: Vec<T> = s.iter().map(|&v| pow_neg(v, cfg.beta)).collect();
    // t[c] = g[c] * x[c] * s[c]^(-beta-1)
    let t: Vec<T> = (0..x.len()).map(|i| g[i] * x[i] * inv[i] / s[i]).collect();
    let mut grad = Tensor::zeros(input.shape())?;
    let gx = grad.data_mut();
    let mut acc = vec![T::zero(); plane];
    for b in 0..n {
        let base = b * c * plane;
        for ch in 0..c {
            acc.iter_mut().for_each(|v| *v = T::zero());
            for cc in ch.saturating_sub(half)..=(ch + half).min(c - 1) {
                let src = &t[base + cc * plane..base + (cc + 1) * plane];
                acc.iter_mut().zip(src).for_each(|(a, &v)| *a += v);
            }
            let off = base + ch * plane;
            for p in 0..plane {
                let i = off + p;
                gx[i] = g[i] * inv[i] - coef * x[i] * acc[p];
            }
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct Lrn<T> {
    pub config: LrnConfig,
    cache: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> Lrn<T> {
    pub fn new(config: LrnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Lrn {
            config,
            cache: None,
        })
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        lrn_forward(input, &self.config)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, scale) = lrn_forward_cached(input, &self.config)?;
        self.cache = Some((input.clone(), scale));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (input, scale) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Contract("lrn backward without forward".into()))?;
        lrn_backward(input, scale, grad_out, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_maps_to_zero() {
        let x = Tensor::<f64>::zeros(&[1, 4, 3, 3]).unwrap();
        let y = lrn_forward(&x, &LrnConfig::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn formula_at_a_point() {
        let cfg = LrnConfig {
            k: 2.0,
            size: 1,
            alpha: 1.0,
            beta: 1.0,
        };
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 1.0).unwrap();
        let y = lrn_forward(&x, &cfg).unwrap();
        assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn window_is_clipped_at_channel_edges() {
        let cfg = LrnConfig {
            k: 1.0,
            size: 3,
            alpha: 3.0,
            beta: 1.0,
        };
        // channels 1, 2, 3 at one pixel
        let x = Tensor::<f64>::from_vec(&[1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = lrn_forward(&x, &cfg).unwrap();
        assert!((y.data()[0] - 1.0 / (1.0 + 1.0 + 4.0)).abs() < 1e-15);
        assert!((y.data()[1] - 2.0 / (1.0 + 1.0 + 4.0 + 9.0)).abs() < 1e-15);
        assert!((y.data()[2] - 3.0 / (1.0 + 4.0 + 9.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_even_window() {
        let cfg = LrnConfig {
            size: 4,
            ..LrnConfig::default()
        };
        assert!(Lrn::<f32>::new(cfg).is_err());
    }
}
