//! Declarative model specs and the layer-stack networks built from them.
//!
//! A network is a trunk of image layers followed by zero or more dense heads that all
//! read the flattened trunk output. With no heads the trunk output is the model output.

use serde::{Deserialize, Serialize};

use crate::adaptive::{fmn_param_count, AdaptiveConvLayer, FilterManifoldNet, FilterShape};
use crate::crowd::AuxKind;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    init, Activation, ActivationLayer, BatchNorm2d, Conv2d, Dense, Lrn, LrnConfig, MaxPool2,
    Mode, Padding, Param,
};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    StaticConv {
        filters: usize,
        kh: usize,
        kw: usize,
        activation: Activation,
        padding: Padding,
    },
    AdaptiveConv {
        filters: usize,
        kh: usize,
        kw: usize,
        activation: Activation,
        padding: Padding,
        hidden: Vec<usize>,
    },
    BatchNorm,
    Activation {
        activation: Activation,
    },
    Lrn {
        config: LrnConfig,
    },
    Pool,
    Dense {
        outputs: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(filters: usize, k: usize, activation: Activation) -> Self {
        LayerSpec::StaticConv {
            filters,
            kh: k,
            kw: k,
            activation,
            padding: Padding::Same,
        }
    }

    pub fn adaptive(filters: usize, k: usize, activation: Activation) -> Self {
        LayerSpec::AdaptiveConv {
            filters,
            kh: k,
            kw: k,
            activation,
            padding: Padding::Same,
            hidden: crate::adaptive::DEFAULT_HIDDEN.to_vec(),
        }
    }

    pub fn lrn() -> Self {
        LayerSpec::Lrn {
            config: LrnConfig::default(),
        }
    }

    pub fn dense(outputs: usize, activation: Activation) -> Self {
        LayerSpec::Dense {
            outputs,
            activation,
        }
    }
}

/// Full description of a model: input geometry, side-information width, trunk and heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// `(channels, rows, cols)` of one input sample.
    pub input: [usize; 3],
    /// Side information fed to the adaptive layers; `None` for plain models.
    pub aux: Option<AuxKind>,
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<Vec<LayerSpec>>,
}

/// One row of a parameter table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub params: usize,
    /// Output width: generated values for an FMN, filters for a conv, units for a dense layer.
    pub outputs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamTable {
    pub rows: Vec<ParamRow>,
}

impl ParamTable {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.name == name).map(|r| r.params)
    }
}

/// Walks the spec, checking channel wiring, and calls `visit(layer, input_shape, width)`
/// for every layer in build order. `width` is the dense input width (0 in the trunk).
/// Returns the trunk output shape.
fn walk_spec(
    spec: &ModelSpec,
    mut visit: impl FnMut(&LayerSpec, [usize; 3], usize),
) -> Result<[usize; 3]> {
    let [c0, h0, w0] = spec.input;
    if c0 == 0 || h0 == 0 || w0 == 0 {
        return Err(invalid!("model input {:?} has a zero extent", spec.input));
    }
    let mut shape = spec.input;
    for layer in &spec.trunk {
        visit(layer, shape, 0);
        let [c, h, w] = shape;
        shape = match layer {
            LayerSpec::StaticConv {
                filters,
                kh,
                kw,
                activation,
                padding,
            }
            | LayerSpec::AdaptiveConv {
                filters,
                kh,
                kw,
                activation,
                padding,
                ..
            } => {
                activation.validate()?;
                if *filters == 0 {
                    return Err(invalid!("convolution with zero filters"));
                }
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(invalid!("kernel {kh}x{kw} must have odd extents"));
                }
                if matches!(layer, LayerSpec::AdaptiveConv { .. }) && spec.aux.is_none() {
                    return Err(invalid!("adaptive layer in a model without side information"));
                }
                match padding {
                    Padding::Same => [*filters, h, w],
                    Padding::Valid => {
                        if *kh > h || *kw > w {
                            return Err(invalid!("{kh}x{kw} kernel larger than {h}x{w} input"));
                        }
                        [*filters, h - kh + 1, w - kw + 1]
                    }
                }
            }
            LayerSpec::Pool => [c, crate::nn::pooled_extent(h), crate::nn::pooled_extent(w)],
            LayerSpec::Lrn { config } => {
                config.validate()?;
                shape
            }
            LayerSpec::BatchNorm => shape,
            LayerSpec::Activation { activation } => {
                activation.validate()?;
                shape
            }
            LayerSpec::Dense { .. } => {
                return Err(invalid!("dense layers belong in a head, not the trunk"))
            }
        };
    }
    let flat = shape.iter().product::<usize>();
    for head in &spec.heads {
        if head.is_empty() {
            return Err(invalid!("empty head"));
        }
        let mut width = flat;
        for layer in head {
            visit(layer, [width, 1, 1], width);
            match layer {
                LayerSpec::Dense {
                    outputs,
                    activation,
                } => {
                    activation.validate()?;
                    if *outputs == 0 {
                        return Err(invalid!("dense layer with zero outputs"));
                    }
                    width = *outputs;
                }
                other => return Err(invalid!("head layers must be dense, got {other:?}")),
            }
        }
    }
    Ok(shape)
}

impl ModelSpec {
    /// Width of the auxiliary vector (zero without side information).
    pub fn aux_dim(&self) -> usize {
        self.aux.map_or(0, AuxKind::dim)
    }

    /// Trunk output shape after validating the wiring.
    pub fn trunk_output(&self) -> Result<[usize; 3]> {
        walk_spec(self, |_, _, _| {})
    }

    /// Length of the flattened trunk output that feeds the heads.
    pub fn flatten_len(&self) -> Result<usize> {
        Ok(self.trunk_output()?.iter().product())
    }

    pub fn has_adaptive(&self) -> bool {
        self.trunk
            .iter()
            .any(|l| matches!(l, LayerSpec::AdaptiveConv { .. }))
    }

    /// Per-layer parameter counts derived from the spec alone.
    pub fn param_table(&self) -> Result<ParamTable> {
        let mut rows = Vec::new();
        let (mut conv, mut bn, mut fc) = (0, 0, 0);
        let aux_dim = self.aux_dim();
        walk_spec(self, |layer, [c, _, _], width| match layer {
            LayerSpec::StaticConv {
                filters, kh, kw, ..
            } => {
                conv += 1;
                rows.push(ParamRow {
                    name: format!("conv{conv}"),
                    params: filters * (c * kh * kw + 1),
                    outputs: *filters,
                });
            }
            LayerSpec::AdaptiveConv {
                filters,
                kh,
                kw,
                hidden,
                ..
            } => {
                conv += 1;
                let out = FilterShape::new(*filters, c, *kh, *kw).output_len();
                rows.push(ParamRow {
                    name: format!("FMN{conv}"),
                    params: fmn_param_count(aux_dim, hidden, out),
                    outputs: out,
                });
                rows.push(ParamRow {
                    name: format!("conv{conv}"),
                    params: 0,
                    outputs: *filters,
                });
            }
            LayerSpec::BatchNorm => {
                bn += 1;
                rows.push(ParamRow {
                    name: format!("bn{bn}"),
                    params: 2 * c,
                    outputs: c,
                });
            }
            LayerSpec::Dense { outputs, .. } => {
                fc += 1;
                rows.push(ParamRow {
                    name: format!("FC{fc}"),
                    params: crate::nn::dense_param_count(width, *outputs),
                    outputs: *outputs,
                });
            }
            _ => {}
        })?;
        Ok(ParamTable { rows })
    }
}

/// A built layer with its caches.
#[derive(Debug, Clone)]
pub enum Layer<T> {
    StaticConv {
        conv: Conv2d<T>,
        act: ActivationLayer<T>,
    },
    AdaptiveConv(AdaptiveConvLayer<T>),
    BatchNorm(BatchNorm2d<T>),
    Activation(ActivationLayer<T>),
    Lrn(Lrn<T>),
    Pool(MaxPool2),
    Dense {
        dense: Dense<T>,
        act: ActivationLayer<T>,
    },
}

fn need_aux<T>(aux: Option<&Tensor<T>>) -> Result<&Tensor<T>> {
    aux.ok_or_else(|| invalid!("adaptive layer needs an aux batch"))
}

impl<T: Scalar> Layer<T> {
    fn build(spec: &LayerSpec, [c, _, _]: [usize; 3], width: usize, aux_dim: usize, rng: &mut Rng) -> Result<Self> {
        Ok(match spec {
            LayerSpec::StaticConv {
                filters,
                kh,
                kw,
                activation,
                padding,
            } => {
                let fan_in = c * kh * kw;
                let w = init::fan_in_uniform(rng, &[*filters, c, *kh, *kw], fan_in, init::gain_for(*activation))?;
                Layer::StaticConv {
                    conv: Conv2d::new(w, Tensor::zeros(&[*filters])?, *padding)?,
                    act: ActivationLayer::new(*activation)?,
                }
            }
            LayerSpec::AdaptiveConv {
                filters,
                kh,
                kw,
                activation,
                padding,
                hidden,
            } => {
                let shape = FilterShape::new(*filters, c, *kh, *kw);
                let fmn = FilterManifoldNet::new(aux_dim, hidden, shape, *activation, rng)?;
                Layer::AdaptiveConv(AdaptiveConvLayer::new(fmn, *activation, *padding)?)
            }
            LayerSpec::BatchNorm => Layer::BatchNorm(BatchNorm2d::new(c)?),
            LayerSpec::Activation { activation } => Layer::Activation(ActivationLayer::new(*activation)?),
            LayerSpec::Lrn { config } => Layer::Lrn(Lrn::new(*config)?),
            LayerSpec::Pool => Layer::Pool(MaxPool2::new()),
            LayerSpec::Dense {
                outputs,
                activation,
            } => {
                let w = init::fan_in_uniform(rng, &[width, *outputs], width, init::gain_for(*activation))?;
                Layer::Dense {
                    dense: Dense::new(w, Tensor::zeros(&[*outputs])?)?,
                    act: ActivationLayer::new(*activation)?,
                }
            }
        })
    }

    pub fn infer(&self, x: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        match self {
            Layer::StaticConv { conv, act } => Ok(act.infer(&conv.infer(x)?)),
            Layer::AdaptiveConv(layer) => layer.infer(x, need_aux(aux)?),
            Layer::BatchNorm(bn) => bn.infer(x),
            Layer::Activation(act) => Ok(act.infer(x)),
            Layer::Lrn(lrn) => lrn.infer(x),
            Layer::Pool(pool) => pool.infer(x),
            Layer::Dense { dense, act } => Ok(act.infer(&dense.infer(x)?)),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, aux: Option<&Tensor<T>>, mode: Mode) -> Result<Tensor<T>> {
        match self {
            Layer::StaticConv { conv, act } => Ok(act.forward(&conv.forward(x)?)),
            Layer::AdaptiveConv(layer) => layer.forward(x, need_aux(aux)?),
            Layer::BatchNorm(bn) => bn.forward(x, mode),
            Layer::Activation(act) => Ok(act.forward(x)),
            Layer::Lrn(lrn) => lrn.forward(x),
            Layer::Pool(pool) => pool.forward(x),
            Layer::Dense { dense, act } => Ok(act.forward(&dense.forward(x)?)),
        }
    }

    pub fn backward(&mut self, g: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::StaticConv { conv, act } => conv.backward(&act.backward(g)?),
            Layer::AdaptiveConv(layer) => layer.backward(g),
            Layer::BatchNorm(bn) => bn.backward(g),
            Layer::Activation(act) => act.backward(g),
            Layer::Lrn(lrn) => lrn.backward(g),
            Layer::Pool(pool) => pool.backward(g),
            Layer::Dense { dense, act } => dense.backward(&act.backward(g)?),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match self {
            Layer::StaticConv { conv, .. } => conv.params.params_mut(),
            Layer::AdaptiveConv(layer) => layer.params_mut(),
            Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Dense { dense, .. } => dense.params.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        match self {
            Layer::StaticConv { conv, .. } => conv.params.params(),
            Layer::AdaptiveConv(layer) => layer.fmn.params(),
            Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Dense { dense, .. } => dense.params.params(),
            _ => Vec::new(),
        }
    }
}

/// A model built from a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ModelSpec,
    pub trunk: Vec<Layer<T>>,
    pub heads: Vec<Vec<Layer<T>>>,
    trunk_shape: Option<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    pub fn build(spec: &ModelSpec, rng: &mut Rng) -> Result<Self> {
        let mut plan = Vec::new();
        walk_spec(spec, |layer, shape, width| plan.push((layer.clone(), shape, width)))?;
        let mut plan = plan.into_iter();
        let mut layer = |plan: &mut std::vec::IntoIter<(LayerSpec, [usize; 3], usize)>| {
            let (l, shape, width) = plan.next().expect("walk visits every layer");
            Layer::build(&l, shape, width, spec.aux_dim(), rng)
        };
        let trunk = (0..spec.trunk.len())
            .map(|_| layer(&mut plan))
            .collect::<Result<Vec<_>>>()?;
        let heads = spec
            .heads
            .iter()
            .map(|h| (0..h.len()).map(|_| layer(&mut plan)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            spec: spec.clone(),
            trunk,
            heads,
            trunk_shape: None,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_input(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<()> {
        let (n, c, h, w) = input.dims4()?;
        if !self.spec.heads.is_empty() && [c, h, w] != self.spec.input {
            return Err(invalid!(
                "input sample shape {:?} does not match model input {:?}",
                [c, h, w],
                self.spec.input
            ));
        }
        if c != self.spec.input[0] {
            return Err(invalid!("model expects {} input channels, got {c}", self.spec.input[0]));
        }
        if self.spec.has_adaptive() {
            match aux.map(|a| a.shape().to_vec()) {
                Some(s) if s == [n, self.spec.aux_dim()] => {}
                Some(s) => {
                    return Err(invalid!(
                        "aux batch shape {s:?}, expected [{n}, {}]",
                        self.spec.aux_dim()
                    ))
                }
                None => return Err(invalid!("model needs side information")),
            }
        }
        Ok(())
    }

    /// Read-only forward pass; one output per head (or the trunk output without heads).
    pub fn infer(&self, input: &Tensor<T>, aux: Option<&Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        self.check_input(input, aux)?;
        let mut x = input.clone();
        for layer in &self.trunk {
            x = layer.infer(&x, aux)?;
        }
        if self.heads.is_empty() {
            return Ok(vec![x]);
        }
        let n = x.shape()[0];
        let d = x.len() / n;
        let flat = x.reshape(&[n, d])?;
        self.heads
            .iter()
            .map(|head| {
                let mut h = flat.clone();
                for layer in head {
                    h = layer.infer(&h, aux)?;
                }
                Ok(h)
            })
            .collect()
    }

    pub fn forward(
        &mut self,
        input: &Tensor<T>,
        aux: Option<&Tensor<T>>,
        mode: Mode,
    ) -> Result<Vec<Tensor<T>>> {
        self.check_input(input, aux)?;
        let mut x = input.clone();
        for layer in &mut self.trunk {
            x = layer.forward(&x, aux, mode)?;
        }
        self.trunk_shape = Some(x.shape().to_vec());
        if self.heads.is_empty() {
            return Ok(vec![x]);
        }
        let n = x.shape()[0];
        let d = x.len() / n;
        let flat = x.reshape(&[n, d])?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for head in &mut self.heads {
            let mut h = flat.clone();
            for layer in head.iter_mut() {
                h = layer.forward(&h, aux, mode)?;
            }
            outs.push(h);
        }
        Ok(outs)
    }

    /// Backpropagates one gradient per output and accumulates parameter gradients.
    pub fn backward(&mut self, grads: &[Tensor<T>]) -> Result<Tensor<T>> {
        let shape = self
            .trunk_shape
            .take()
            .ok_or_else(|| Error::Contract("network backward without forward".into()))?;
        let outputs = self.heads.len().max(1);
        if grads.len() != outputs {
            return Err(invalid!("{} output gradients for {outputs} outputs", grads.len()));
        }
        let mut g = if self.heads.is_empty() {
            grads[0].clone()
        } else {
            let mut total: Option<Tensor<T>> = None;
            for (head, grad) in self.heads.iter_mut().zip(grads) {
                let mut h = grad.clone();
                for layer in head.iter_mut().rev() {
                    h = layer.backward(&h)?;
                }
                match total.as_mut() {
                    Some(t) => t.add_assign(&h)?,
                    None => total = Some(h),
                }
            }
            total.expect("at least one head").reshape(&shape)?
        };
        for layer in self.trunk.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.trunk
            .iter_mut()
            .chain(self.heads.iter_mut().flatten())
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.trunk
            .iter()
            .chain(self.heads.iter().flatten())
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batch-norm layers of the trunk, in order.
    pub fn batch_norms(&self) -> Vec<&BatchNorm2d<T>> {
        self.trunk
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            })
            .collect()
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d<T>> {
        self.trunk
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(bn) => Some(bn),
                _ => None,
            })
            .collect()
    }

    /// Adaptive layers of the trunk, in order.
    pub fn adaptive_layers(&self) -> Vec<&AdaptiveConvLayer<T>> {
        self.trunk
            .iter()
            .filter_map(|l| match l {
                Layer::AdaptiveConv(a) => Some(a),
                _ => None,
            })
            .collect()
    }

    /// Parameter table counted from the built tensors.
    pub fn param_table(&self) -> ParamTable {
        let mut rows = Vec::new();
        let (mut conv, mut bn, mut fc) = (0, 0, 0);
        for layer in self.trunk.iter().chain(self.heads.iter().flatten()) {
            match layer {
                Layer::StaticConv { conv: c, .. } => {
                    conv += 1;
                    rows.push(ParamRow {
                        name: format!("conv{conv}"),
                        params: c.params.count(),
                        outputs: c.params.bias.len(),
                    });
                }
                Layer::AdaptiveConv(a) => {
                    conv += 1;
                    rows.push(ParamRow {
                        name: format!("FMN{conv}"),
                        params: a.fmn.param_count(),
                        outputs: a.fmn.output_len(),
                    });
                    rows.push(ParamRow {
                        name: format!("conv{conv}"),
                        params: 0,
                        outputs: a.fmn.filter_shape().filters,
                    });
                }
                Layer::BatchNorm(b) => {
                    bn += 1;
                    rows.push(ParamRow {
                        name: format!("bn{bn}"),
                        params: b.gamma.len() + b.beta.len(),
                        outputs: b.gamma.len(),
                    });
                }
                Layer::Dense { dense, .. } => {
                    fc += 1;
                    rows.push(ParamRow {
                        name: format!("FC{fc}"),
                        params: dense.params.count(),
                        outputs: dense.outputs(),
                    });
                }
                _ => {}
            }
        }
        ParamTable { rows }
    }
}

/// Integer formatted with thousands separators.
pub fn format_count(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::with_capacity(s.len() + s.len() / 3);
    for (i, ch) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_spec() -> ModelSpec {
        ModelSpec {
            name: "small".into(),
            input: [1, 9, 9],
            aux: Some(AuxKind::Perspective),
            trunk: vec![
                LayerSpec::adaptive(3, 3, Activation::Relu),
                LayerSpec::lrn(),
                LayerSpec::Pool,
                LayerSpec::conv(4, 3, Activation::Relu),
                LayerSpec::Pool,
            ],
            heads: vec![
                vec![
                    LayerSpec::dense(6, Activation::Relu),
                    LayerSpec::dense(1, Activation::Identity),
                ],
                vec![LayerSpec::dense(5, Activation::Identity)],
            ],
        }
    }

    #[test]
    fn spec_table_matches_built_tensors() {
        let spec = small_spec();
        let net = Network::<f64>::build(&spec, &mut Rng::seed_from_u64(0)).unwrap();
        assert_eq!(spec.param_table().unwrap(), net.param_table());
        assert_eq!(net.param_table().total(), net.param_count());
        assert_eq!(spec.flatten_len().unwrap(), 4 * 3 * 3);
        assert_eq!(net.heads[0].len(), 2);
        assert_eq!(net.heads[1].len(), 1);
    }

    #[test]
    fn empty_model_has_no_parameters() {
        let spec = ModelSpec {
            name: "empty".into(),
            input: [1, 4, 4],
            aux: None,
            trunk: vec![],
            heads: vec![],
        };
        assert_eq!(spec.param_table().unwrap().total(), 0);
        let net = Network::<f32>::build(&spec, &mut Rng::seed_from_u64(0)).unwrap();
        let x = Tensor::full(&[1, 1, 4, 4], 0.5f32).unwrap();
        assert_eq!(net.infer(&x, None).unwrap()[0], x);
    }

    #[test]
    fn wiring_errors_are_reported() {
        let mut spec = small_spec();
        spec.aux = None;
        assert!(spec.param_table().is_err());
        let mut spec = small_spec();
        spec.trunk.push(LayerSpec::dense(3, Activation::Relu));
        assert!(spec.trunk_output().is_err());
        let mut spec = small_spec();
        spec.heads[0].insert(0, LayerSpec::Pool);
        assert!(spec.trunk_output().is_err());
    }

    #[test]
    fn forward_matches_infer_and_backward_shapes() {
        let spec = small_spec();
        let mut net = Network::<f64>::build(&spec, &mut Rng::seed_from_u64(1)).unwrap();
        let x = init::uniform::<f64>(&mut Rng::seed_from_u64(2), &[2, 1, 9, 9], 1.0).unwrap();
        let aux = Tensor::from_vec(&[2, 1], vec![-0.5, 0.8]).unwrap();
        let a = net.infer(&x, Some(&aux)).unwrap();
        let b = net.forward(&x, Some(&aux), Mode::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(b[0].shape(), &[2, 1]);
        assert_eq!(b[1].shape(), &[2, 5]);
        let gx = net
            .backward(&[Tensor::full(&[2, 1], 1.0).unwrap(), Tensor::zeros(&[2, 5]).unwrap()])
            .unwrap();
        assert_eq!(gx.shape(), x.shape());
        assert!(net.params_mut().iter().all(|p| p.has_fresh_grad()));
    }

    #[test]
    fn missing_aux_is_rejected() {
        let net = Network::<f64>::build(&small_spec(), &mut Rng::seed_from_u64(1)).unwrap();
        let x = Tensor::zeros(&[1, 1, 9, 9]).unwrap();
        assert!(net.infer(&x, None).is_err());
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(format_count(0), "0");
        assert_eq!(format_count(82), "82");
        assert_eq!(format_count(2_666_540), "2,666,540");
    }
}
