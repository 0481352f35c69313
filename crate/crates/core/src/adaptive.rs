//! Adaptive convolution: filters and biases are produced per sample by a small fully
//! connected network (the filter manifold network, FMN) from an auxiliary side-information
//! vector, then used for an ordinary cross-correlation followed by an activation.
//!
//! The FMN output is a flat vector laid out as all filter weights in row-major
//! `(F, C, kh, kw)` order followed by the `F` biases.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::conv::{conv_sample, conv_sample_backward, ConvGeom};
use crate::nn::{
    activation_backward, init, Activation, ActivationLayer, Dense, Padding, Param,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

/// Default hidden layout of the FMN.
pub const DEFAULT_HIDDEN: [usize; 2] = [10, 40];

/// Shape of the filter bank an FMN generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterShape {
    pub filters: usize,
    pub channels: usize,
    pub kh: usize,
    pub kw: usize,
}

impl FilterShape {
    pub fn new(filters: usize, channels: usize, kh: usize, kw: usize) -> Self {
        FilterShape {
            filters,
            channels,
            kh,
            kw,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.filters * self.channels * self.kh * self.kw
    }

    /// `F * (C * kh * kw + 1)`
    pub fn output_len(&self) -> usize {
        self.weight_len() + self.filters
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.filters, self.channels, self.kh, self.kw]
    }
}

/// Total trainable values of an FMN `aux_dim -> hidden... -> output_len`.
pub fn fmn_param_count(aux_dim: usize, hidden: &[usize], output_len: usize) -> usize {
    let mut prev = aux_dim;
    let mut total = 0;
    for &h in hidden.iter().chain(std::iter::once(&output_len)) {
        total += prev * h + h;
        prev = h;
    }
    total
}

/// Fully connected generator `aux -> tanh hidden layers -> linear filter vector`.
#[derive(Debug, Clone)]
pub struct FilterManifoldNet<T> {
    aux_dim: usize,
    hidden: Vec<usize>,
    shape: FilterShape,
    layers: Vec<Dense<T>>,
    acts: Vec<ActivationLayer<T>>,
}

impl<T: Scalar> FilterManifoldNet<T> {
    /// Builds an FMN whose generated filters start out at roughly the scale a static
    /// convolution followed by `conv_activation` would be initialized with.
    pub fn new(
        aux_dim: usize,
        hidden: &[usize],
        shape: FilterShape,
        conv_activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if aux_dim == 0 {
            return Err(invalid!("FMN aux dimension must be positive"));
        }
        if shape.filters == 0 || shape.channels == 0 || shape.kh == 0 || shape.kw == 0 {
            return Err(invalid!("empty filter shape {shape:?}"));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(invalid!("FMN needs at least one non-empty hidden layer"));
        }
        if hidden.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid!(
                "FMN hidden sizes must strictly increase toward the output, got {hidden:?}"
            ));
        }
        let out_len = shape.output_len();
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut acts = Vec::with_capacity(hidden.len());
        let mut prev = aux_dim;
        for &h in hidden {
            let w = init::fan_in_uniform(rng, &[prev, h], prev, 1.0)?;
            layers.push(Dense::new(w, Tensor::zeros(&[h])?)?);
            acts.push(ActivationLayer::new(Activation::Tanh)?);
            prev = h;
        }
        // Generated filter entries: a random base pattern in the bias plus an
        // aux-dependent modulation, each at about half the static-conv init scale.
        let conv_fan_in = shape.channels * shape.kh * shape.kw;
        let filter_std = init::gain_for(conv_activation) / (conv_fan_in as f64).sqrt();
        let last = *hidden.last().expect("non-empty");
        let w_bound = filter_std * (3.0 / last as f64).sqrt();
        let mut w = init::uniform::<T>(rng, &[last, out_len], w_bound)?;
        let b_base = init::uniform::<T>(rng, &[shape.weight_len()], 0.5 * filter_std * 3f64.sqrt())?;
        let mut bias = Tensor::zeros(&[out_len])?;
        bias.data_mut()[..shape.weight_len()].copy_from_slice(b_base.data());
        // conv bias outputs start at zero and with a damped aux dependence
        for row in 0..last {
            for v in &mut w.data_mut()[row * out_len + shape.weight_len()..(row + 1) * out_len] {
                *v *= T::from_f64_lossy(0.1);
            }
        }
        layers.push(Dense::new(w, bias)?);
        Ok(FilterManifoldNet {
            aux_dim,
            hidden: hidden.to_vec(),
            shape,
            layers,
            acts,
        })
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    pub fn hidden(&self) -> &[usize] {
        &self.hidden
    }

    pub fn filter_shape(&self) -> FilterShape {
        self.shape
    }

    pub fn output_len(&self) -> usize {
        self.shape.output_len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.count()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params.params()).collect()
    }

    fn check_aux(&self, aux: &Tensor<T>) -> Result<()> {
        match aux.shape() {
            [_, a] if *a == self.aux_dim => Ok(()),
            s => Err(invalid!(
                "aux batch shape {s:?} does not match FMN aux dimension {}",
                self.aux_dim
            )),
        }
    }

    /// Flat generator output `[N, P]` for an aux batch `[N, A]`.
    pub fn infer_flat(&self, aux: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_aux(aux)?;
        let mut h = aux.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.infer(&h)?;
            if let Some(act) = self.acts.get(i) {
                h = act.infer(&h);
            }
        }
        Ok(h)
    }

    pub fn forward_flat(&mut self, aux: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_aux(aux)?;
        let mut h = aux.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h)?;
            if let Some(act) = self.acts.get_mut(i) {
                h = act.forward(&h);
            }
        }
        Ok(h)
    }

    /// Backpropagates `grad_flat[N, P]` into the FMN weights; returns the aux gradient.
    pub fn backward_flat(&mut self, grad_flat: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad_flat.clone();
        for i in (0..self.layers.len()).rev() {
            if let Some(act) = self.acts.get_mut(i) {
                g = act.backward(&g)?;
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }

    /// Generated `(filters[F,C,kh,kw], bias[F])` for one normalized aux vector.
    pub fn generate(&self, aux: &[T]) -> Result<(Tensor<T>, Tensor<T>)> {
        if aux.len() != self.aux_dim {
            return Err(invalid!(
                "aux has {} components, FMN expects {}",
                aux.len(),
                self.aux_dim
            ));
        }
        let flat = self.infer_flat(&Tensor::from_vec(&[1, self.aux_dim], aux.to_vec())?)?;
        split_flat(flat.data(), &self.shape)
    }
}

fn split_flat<T: Scalar>(flat: &[T], shape: &FilterShape) -> Result<(Tensor<T>, Tensor<T>)> {
    let wl = shape.weight_len();
    Ok((
        Tensor::from_vec(&shape.dims(), flat[..wl].to_vec())?,
        Tensor::from_vec(&[shape.filters], flat[wl..].to_vec())?,
    ))
}

/// Generated filters and bias for one normalized aux vector.
pub fn fmn_forward<T: Scalar>(
    fmn: &FilterManifoldNet<T>,
    aux: &[T],
) -> Result<(Tensor<T>, Tensor<T>)> {
    fmn.generate(aux)
}

#[derive(Debug, Clone)]
struct AdaptiveCache<T> {
    input: Tensor<T>,
    flat: Tensor<T>,
    pre: Tensor<T>,
    out: Tensor<T>,
}

/// `h = f(x * g(z; w))`: convolution with FMN-generated filters, then activation.
#[derive(Debug, Clone)]
pub struct AdaptiveConvLayer<T> {
    pub fmn: FilterManifoldNet<T>,
    pub activation: Activation,
    pub padding: Padding,
    cache: Option<AdaptiveCache<T>>,
}

impl<T: Scalar> AdaptiveConvLayer<T> {
    pub fn new(fmn: FilterManifoldNet<T>, activation: Activation, padding: Padding) -> Result<Self> {
        activation.validate()?;
        Ok(AdaptiveConvLayer {
            fmn,
            activation,
            padding,
            cache: None,
        })
    }

    fn geom(&self, input: &Tensor<T>, aux: &Tensor<T>) -> Result<(usize, ConvGeom)> {
        let (n, c, h, w) = input.dims4()?;
        let s = self.fmn.filter_shape();
        if c != s.channels {
            return Err(invalid!(
                "adaptive conv expects {} input channels, got {c}",
                s.channels
            ));
        }
        if aux.shape().first() != Some(&n) {
            return Err(invalid!(
                "aux batch {:?} does not match input batch {n}",
                aux.shape()
            ));
        }
        Ok((n, ConvGeom::new((c, h, w), (s.filters, s.kh, s.kw), self.padding)?))
    }

    fn convolve(&self, input: &Tensor<T>, flat: &Tensor<T>, g: &ConvGeom) -> Result<Tensor<T>> {
        input.ensure_finite("adaptive conv input")?;
        let n = input.shape()[0];
        let wl = g.filter_len();
        let mut pre = Tensor::zeros(&[n, g.filters, g.out_h, g.out_w])?;
        let mut scratch = Vec::new();
        for s in 0..n {
            let row = flat.outer(s);
            conv_sample(
                input.outer(s),
                &row[..wl],
                &row[wl..],
                g,
                pre.outer_mut(s),
                &mut scratch,
            );
        }
        Ok(pre)
    }

    /// Read-only forward pass; safe to call concurrently on a shared layer.
    pub fn infer(&self, input: &Tensor<T>, aux: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, g) = self.geom(input, aux)?;
        let flat = self.fmn.infer_flat(aux)?;
        let pre = self.convolve(input, &flat, &g)?;
        Ok(crate::nn::activation(&pre, self.activation))
    }

    pub fn forward(&mut self, input: &Tensor<T>, aux: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, g) = self.geom(input, aux)?;
        let flat = self.fmn.forward_flat(aux)?;
        let pre = self.convolve(input, &flat, &g)?;
        let out = crate::nn::activation(&pre, self.activation);
        self.cache = Some(AdaptiveCache {
            input: input.clone(),
            flat,
            pre,
            out: out.clone(),
        });
        Ok(out)
    }

    /// Returns the input gradient and accumulates gradients into the FMN weights.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("adaptive conv backward without forward".into()))?;
        let s = self.fmn.filter_shape();
        let (n, c, h, w) = cache.input.dims4()?;
        let g = ConvGeom::new((c, h, w), (s.filters, s.kh, s.kw), self.padding)?;
        let grad_pre = activation_backward(&cache.pre, &cache.out, grad_out, self.activation)?;
        let wl = g.filter_len();
        let mut grad_flat = Tensor::zeros(cache.flat.shape())?;
        let mut grad_input = Tensor::zeros_like(&cache.input);
        let (mut s1, mut s2) = (Vec::new(), Vec::new());
        for i in 0..n {
            let gf = grad_flat.outer_mut(i);
            let (gw, gb) = gf.split_at_mut(wl);
            conv_sample_backward(
                cache.input.outer(i),
                &cache.flat.outer(i)[..wl],
                grad_pre.outer(i),
                &g,
                Some(grad_input.outer_mut(i)),
                gw,
                gb,
                &mut s1,
                &mut s2,
            );
        }
        self.fmn.backward_flat(&grad_flat)?;
        Ok(grad_input)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.fmn.params_mut()
    }

    /// Generated filter banks, one per aux vector of `grid`.
    pub fn manifold_probe(&self, grid: &[Vec<T>]) -> Result<Vec<Tensor<T>>> {
        manifold_probe(&self.fmn, grid)
    }
}

/// Sweeps the learned filter manifold: the generated filter tensor for every aux vector.
pub fn manifold_probe<T: Scalar>(
    fmn: &FilterManifoldNet<T>,
    grid: &[Vec<T>],
) -> Result<Vec<Tensor<T>>> {
    if grid.is_empty() {
        return Err(invalid!("manifold probe needs a non-empty aux grid"));
    }
    grid.iter().map(|z| Ok(fmn.generate(z)?.0)).collect()
}

/// L2 distances between consecutive snapshots of a probe.
pub fn successive_distances<T: Scalar>(snapshots: &[Tensor<T>]) -> Result<Vec<f64>> {
    snapshots
        .windows(2)
        .map(|w| w[0].l2_distance(&w[1]))
        .collect()
}

/// Writes probe snapshots as CSV: `aux` then one column per flattened filter value.
pub fn write_probe_csv<T: Scalar, W: Write>(
    out: W,
    aux: &[f64],
    snapshots: &[Tensor<T>],
) -> Result<()> {
    if aux.len() != snapshots.len() {
        return Err(invalid!("{} aux values for {} snapshots", aux.len(), snapshots.len()));
    }
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = snapshots.first() {
        let mut header = vec!["aux".to_string()];
        header.extend((0..first.len()).map(|i| format!("w{i}")));
        w.write_record(&header)?;
    }
    for (z, snap) in aux.iter().zip(snapshots) {
        let mut row = vec![format!("{z}")];
        row.extend(snap.data().iter().map(|v| format!("{v}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::conv2d_forward;
    use rand::SeedableRng;

    fn rng(seed: u64) -> Rng {
        Rng::seed_from_u64(seed)
    }

    fn fmn(shape: FilterShape, seed: u64) -> FilterManifoldNet<f64> {
        FilterManifoldNet::new(1, &DEFAULT_HIDDEN, shape, Activation::Relu, &mut rng(seed)).unwrap()
    }

    #[test]
    fn output_lengths_and_parameter_counts() {
        let s1 = FilterShape::new(32, 1, 5, 5);
        let s2 = FilterShape::new(32, 32, 5, 5);
        assert_eq!(s1.output_len(), 832);
        assert_eq!(s2.output_len(), 25_632);
        assert_eq!(fmn_param_count(1, &DEFAULT_HIDDEN, 832), 34_572);
        assert_eq!(fmn_param_count(1, &DEFAULT_HIDDEN, 25_632), 1_051_372);
        assert_eq!(fmn(s1, 0).param_count(), 34_572);
    }

    #[test]
    fn hidden_sizes_must_increase() {
        let s = FilterShape::new(2, 1, 3, 3);
        assert!(FilterManifoldNet::<f64>::new(1, &[40, 10], s, Activation::Relu, &mut rng(0)).is_err());
        assert!(FilterManifoldNet::<f64>::new(1, &[8, 8], s, Activation::Relu, &mut rng(0)).is_err());
        assert!(FilterManifoldNet::<f64>::new(1, &[4, 8], s, Activation::Relu, &mut rng(0)).is_ok());
    }

    #[test]
    fn zero_fmn_generates_zero_filters() {
        let mut f = fmn(FilterShape::new(3, 2, 3, 3), 1);
        for p in f.params_mut() {
            p.value.fill(0.0);
        }
        let (w, b) = fmn_forward(&f, &[0.7]).unwrap();
        assert_eq!(w.shape(), &[3, 2, 3, 3]);
        assert!(w.data().iter().chain(b.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn aux_dimension_is_checked() {
        let f = fmn(FilterShape::new(3, 2, 3, 3), 1);
        assert!(matches!(fmn_forward(&f, &[0.1, 0.2]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn forward_is_composition_of_generation_conv_and_activation() {
        let shape = FilterShape::new(4, 2, 3, 3);
        let mut layer =
            AdaptiveConvLayer::new(fmn(shape, 2), Activation::Relu, Padding::Same).unwrap();
        let mut r = rng(5);
        let x = init::uniform::<f64>(&mut r, &[1, 2, 7, 6], 1.0).unwrap();
        let aux = Tensor::from_vec(&[1, 1], vec![0.3]).unwrap();
        let got = layer.forward(&x, &aux).unwrap();
        let (w, b) = fmn_forward(&layer.fmn, &[0.3]).unwrap();
        let want = crate::nn::activation(
            &conv2d_forward(&x, &w, &b, Padding::Same).unwrap(),
            Activation::Relu,
        );
        assert_eq!(got, want);
        assert_eq!(layer.infer(&x, &aux).unwrap(), want);
    }

    #[test]
    fn distinct_aux_values_give_distinct_filters() {
        let f = fmn(FilterShape::new(4, 2, 3, 3), 3);
        let (a, _) = fmn_forward(&f, &[-0.5]).unwrap();
        let (b, _) = fmn_forward(&f, &[0.5]).unwrap();
        assert!(a.l2_distance(&b).unwrap() > 0.0);
    }

    #[test]
    fn zero_fmn_output_is_activation_of_zero() {
        let mut f = fmn(FilterShape::new(2, 1, 3, 3), 4);
        for p in f.params_mut() {
            p.value.fill(0.0);
        }
        let layer = AdaptiveConvLayer::new(f, Activation::Sigmoid, Padding::Same).unwrap();
        let x = Tensor::full(&[2, 1, 4, 4], 0.8).unwrap();
        let aux = Tensor::from_vec(&[2, 1], vec![0.1, -0.9]).unwrap();
        let y = layer.infer(&x, &aux).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut layer = AdaptiveConvLayer::new(
            fmn(FilterShape::new(2, 1, 3, 3), 6),
            Activation::Tanh,
            Padding::Same,
        )
        .unwrap();
        let x = init::uniform::<f64>(&mut rng(1), &[2, 1, 5, 5], 1.0).unwrap();
        let aux = Tensor::from_vec(&[2, 1], vec![0.1, -0.9]).unwrap();
        layer.forward(&x, &aux).unwrap();
        for p in layer.params_mut() {
            p.zero_grad();
        }
        let gx = layer.backward(&Tensor::zeros(&[2, 2, 5, 5]).unwrap()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        for p in layer.params_mut() {
            assert!(p.grad.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_without_forward_is_a_contract_violation() {
        let mut layer = AdaptiveConvLayer::new(
            fmn(FilterShape::new(2, 1, 3, 3), 6),
            Activation::Tanh,
            Padding::Same,
        )
        .unwrap();
        let g = Tensor::zeros(&[1, 2, 5, 5]).unwrap();
        assert!(matches!(layer.backward(&g), Err(Error::Contract(_))));
    }

    #[test]
    fn input_gradient_matches_static_conv_with_frozen_filters() {
        let mut layer = AdaptiveConvLayer::new(
            fmn(FilterShape::new(3, 2, 3, 3), 8),
            Activation::Identity,
            Padding::Same,
        )
        .unwrap();
        let mut r = rng(9);
        let x = init::uniform::<f64>(&mut r, &[1, 2, 5, 5], 1.0).unwrap();
        let aux = Tensor::from_vec(&[1, 1], vec![-0.4]).unwrap();
        let go = init::uniform::<f64>(&mut r, &[1, 3, 5, 5], 1.0).unwrap();
        layer.forward(&x, &aux).unwrap();
        let gx = layer.backward(&go).unwrap();
        let (w, _) = fmn_forward(&layer.fmn, &[-0.4]).unwrap();
        let want = crate::nn::conv2d_backward(&x, &w, &go, Padding::Same).unwrap();
        assert_eq!(gx, want.grad_input);
    }

    #[test]
    fn probe_constant_grid_gives_identical_snapshots() {
        let f = fmn(FilterShape::new(2, 1, 3, 3), 10);
        let snaps = manifold_probe(&f, &[vec![0.2], vec![0.2], vec![0.2]]).unwrap();
        assert_eq!(snaps.len(), 3);
        assert!(successive_distances(&snaps).unwrap().iter().all(|&d| d == 0.0));
        assert!(manifold_probe(&f, &[]).is_err());
    }

    #[test]
    fn probe_csv_has_one_row_per_aux_value() {
        let f = fmn(FilterShape::new(2, 1, 3, 3), 10);
        let grid: Vec<Vec<f64>> = (0..16).map(|i| vec![-1.0 + i as f64 / 8.0]).collect();
        let snaps = manifold_probe(&f, &grid).unwrap();
        let mut buf = Vec::new();
        let aux: Vec<f64> = grid.iter().map(|g| g[0]).collect();
        write_probe_csv(&mut buf, &aux, &snaps).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0].split(',').count(), 1 + 18);
    }
}
