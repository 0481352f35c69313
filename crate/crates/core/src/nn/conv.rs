//! Stride-1 2-D cross-correlation lowered to GEMM through im2col.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::param::LayerParams;
use crate::tensor::{gemm, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Spatial geometry of one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub filters: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(
        (channels, height, width): (usize, usize, usize),
        (filters, kh, kw): (usize, usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(invalid!("kernel {kh}x{kw} must have odd extents"));
        }
        let (pad_h, pad_w, out_h, out_w) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, height, width),
            Padding::Valid => {
                if kh > height || kw > width {
                    return Err(invalid!(
                        "kernel {kh}x{kw} larger than input {height}x{width}"
                    ));
                }
                (0, 0, height - kh + 1, width - kw + 1)
            }
        };
        Ok(ConvGeom {
            channels,
            height,
            width,
            filters,
            kh,
            kw,
            pad_h,
            pad_w,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    /// Filter tensor length `F * C * kh * kw`.
    pub fn filter_len(&self) -> usize {
        self.filters * self.patch_len()
    }
}

/// Returns the range of output columns `x` for which `x + offset` lies in `0..len`.
#[inline]
fn valid_range(offset: isize, out_len: usize, len: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).clamp(0, out_len as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut Vec<T>) {
    let n_out = g.out_len();
    cols.clear();
    cols.resize(g.patch_len() * n_out, T::zero());
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let dst = &mut cols[row * n_out..(row + 1) * n_out];
                let dy = i as isize - g.pad_h as isize;
                let dx = j as isize - g.pad_w as isize;
                let (x_lo, x_hi) = valid_range(dx, g.out_w, g.width);
                for y in 0..g.out_h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[yy as usize * g.width..(yy as usize + 1) * g.width];
                    let out_row = &mut dst[y * g.out_w..(y + 1) * g.out_w];
                    let s0 = (x_lo as isize + dx) as usize;
                    out_row[x_lo..x_hi].copy_from_slice(&src_row[s0..s0 + (x_hi - x_lo)]);
                }
                row += 1;
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, gx: &mut [T]) {
    let n_out = g.out_len();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut gx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let src = &cols[row * n_out..(row + 1) * n_out];
                let dy = i as isize - g.pad_h as isize;
                let dx = j as isize - g.pad_w as isize;
                let (x_lo, x_hi) = valid_range(dx, g.out_w, g.width);
                for y in 0..g.out_h {
                    let yy = y as isize + dy;
                    if yy < 0 || yy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut plane[yy as usize * g.width..(yy as usize + 1) * g.width];
                    let in_row = &src[y * g.out_w..(y + 1) * g.out_w];
                    let s0 = (x_lo as isize + dx) as usize;
                    for (d, &v) in dst_row[s0..s0 + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&in_row[x_lo..x_hi])
                    {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Forward pass for a single sample; `out` has length `F * out_h * out_w`.
pub(crate) fn conv_sample<T: Scalar>(
    x: &[T],
    filters: &[T],
    bias: &[T],
    g: &ConvGeom,
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let n_out = g.out_len();
    for (f, &b) in bias.iter().enumerate() {
        out[f * n_out..(f + 1) * n_out].fill(b);
    }
    let cols: &[T] = if g.is_pointwise() && g.out_len() == g.height * g.width {
        x
    } else {
        im2col(x, g, scratch);
        scratch
    };
    gemm::nn(g.filters, g.patch_len(), n_out, filters, cols, out, true);
}

/// Backward pass for a single sample. Filter and bias gradients are accumulated;
/// the input gradient is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_sample_backward<T: Scalar>(
    x: &[T],
    filters: &[T],
    grad_out: &[T],
    g: &ConvGeom,
    grad_x: Option<&mut [T]>,
    grad_filters: &mut [T],
    grad_bias: &mut [T],
    scratch: &mut Vec<T>,
    scratch2: &mut Vec<T>,
) {
    let n_out = g.out_len();
    let k = g.patch_len();
    for (f, gb) in grad_bias.iter_mut().enumerate() {
        *gb += grad_out[f * n_out..(f + 1) * n_out].iter().copied().sum::<T>();
    }
    let pointwise = g.is_pointwise() && g.out_len() == g.height * g.width;
    let cols: &[T] = if pointwise {
        x
    } else {
        im2col(x, g, scratch);
        scratch
    };
    gemm::nt(g.filters, n_out, k, grad_out, cols, grad_filters, true);
    if let Some(grad_x) = grad_x {
        if pointwise {
            gemm::tn(k, g.filters, n_out, filters, grad_out, grad_x, false);
        } else {
            scratch2.clear();
            scratch2.resize(k * n_out, T::zero());
            gemm::tn(k, g.filters, n_out, filters, grad_out, scratch2, false);
            grad_x.fill(T::zero());
            col2im(scratch2, g, grad_x);
        }
    }
}

fn conv_geom<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    padding: Padding,
) -> Result<ConvGeom> {
    let (_, c, h, w) = input.dims4()?;
    let (f, fc, kh, kw) = filters.dims4()?;
    if fc != c {
        return Err(invalid!(
            "filters expect {fc} input channels, input has {c}"
        ));
    }
    if let Some(bias) = bias {
        if bias.shape() != [f] {
            return Err(invalid!("bias shape {:?} does not match {f} filters", bias.shape()));
        }
    }
    ConvGeom::new((c, h, w), (f, kh, kw), padding)
}

/// Cross-correlates `input[N,C,H,W]` with `filters[F,C,kh,kw]` and adds `bias[F]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = conv_geom(input, filters, Some(bias), padding)?;
    input.ensure_finite("conv2d input")?;
    let n = input.shape()[0];
    let mut out = Tensor::zeros(&[n, g.filters, g.out_h, g.out_w])?;
    let mut scratch = Vec::new();
    for s in 0..n {
        conv_sample(
            input.outer(s),
            filters.data(),
            bias.data(),
            &g,
            out.outer_mut(s),
            &mut scratch,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its three operands.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_filters: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    padding: Padding,
) -> Result<ConvGrads<T>> {
    let g = conv_geom(input, filters, None, padding)?;
    let n = input.shape()[0];
    if grad_out.shape() != [n, g.filters, g.out_h, g.out_w] {
        return Err(invalid!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            [n, g.filters, g.out_h, g.out_w]
        ));
    }
    let mut grad_input = Tensor::zeros_like(input);
    let mut grad_filters = Tensor::zeros_like(filters);
    let mut grad_bias = Tensor::zeros(&[g.filters])?;
    let (mut s1, mut s2) = (Vec::new(), Vec::new());
    for s in 0..n {
        conv_sample_backward(
            input.outer(s),
            filters.data(),
            grad_out.outer(s),
            &g,
            Some(grad_input.outer_mut(s)),
            grad_filters.data_mut(),
            grad_bias.data_mut(),
            &mut s1,
            &mut s2,
        );
    }
    Ok(ConvGrads {
        grad_input,
        grad_filters,
        grad_bias,
    })
}

/// Convolution layer with learned static filters.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub params: LayerParams<T>,
    pub padding: Padding,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(filters: Tensor<T>, bias: Tensor<T>, padding: Padding) -> Result<Self> {
        let (f, _, _, _) = filters.dims4()?;
        if bias.shape() != [f] {
            return Err(invalid!("bias shape {:?} for {f} filters", bias.shape()));
        }
        Ok(Conv2d {
            params: LayerParams::new(filters, bias),
            padding,
            cache: None,
        })
    }

    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(
            input,
            &self.params.weight.value,
            &self.params.bias.value,
            self.padding,
        )
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
            .ok_or_else(|| Error::Contract("conv2d backward without forward".into()))?;
        let grads = conv2d_backward(input, &self.params.weight.value, grad_out, self.padding)?;
        self.params.weight.accumulate(grads.grad_filters.data())?;
        self.params.bias.accumulate(grads.grad_bias.data())?;
        Ok(grads.grad_input)
    }
}
