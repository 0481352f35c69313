//! Finite-difference gradient suites over every layer kind and the adaptive chain.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::crowd::AuxKind;
use crate::error::{invalid, Result};
use crate::network::{LayerSpec, ModelSpec, Network};
use crate::nn::{
    grad_check, loss_mse, loss_softmax_xent, Activation, GradCheckReport, LrnConfig, Mode, Objective,
    Padding, Param,
};
use crate::rng::{rng_for, Rng};
use crate::tensor::Tensor;

/// Tolerance for dense layers and losses.
pub const TOL_DENSE: f64 = 1e-8;
/// Tolerance for convolution, pooling, LRN, batch norm and stacked element-wise
/// activations (the leaky slope shrinks gradients towards round-off level).
pub const TOL_SPATIAL: f64 = 1e-5;
/// Tolerance for gradients flowing through generated filters into FMN parameters.
pub const TOL_ADAPTIVE: f64 = 1e-4;

fn random(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape matches")
}

/// `sum_h <proj_h, output_h>` of a network in a fixed mode; projection entries are
/// uniform in `[-1, 1)` divided by the output size, so the loss is a mean.
struct NetworkObjective {
    net: Network<f64>,
    aux: Option<Tensor<f64>>,
    proj: Vec<Tensor<f64>>,
    mode: Mode,
}

impl NetworkObjective {
    fn new(spec: ModelSpec, batch: usize, mode: Mode, rng: &mut Rng) -> Result<(Self, Tensor<f64>)> {
        let net = Network::build(&spec, rng)?;
        let [c, h, w] = spec.input;
        let input = random(rng, &[batch, c, h, w], -1.0, 1.0);
        let aux = spec.aux.map(|k| random(rng, &[batch, k.dim()], -1.0, 1.0));
        let mut probe = net.clone();
        let outs = probe.forward(&input, aux.as_ref(), mode)?;
        let proj = outs
            .iter()
            .map(|o| {
                let mut p = random(rng, o.shape(), -1.0, 1.0);
                p.scale(1.0 / o.len() as f64);
                p
            })
            .collect();
        Ok((
            NetworkObjective {
                net,
                aux,
                proj,
                mode,
            },
            input,
        ))
    }
}

impl Objective for NetworkObjective {
    fn loss(&mut self, input: &Tensor<f64>) -> Result<f64> {
        let outs = self.net.forward(input, self.aux.as_ref(), self.mode)?;
        Ok(outs
            .iter()
            .zip(&self.proj)
            .map(|(o, p)| o.data().iter().zip(p.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum())
    }

    fn loss_and_grad(&mut self, input: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        let outs = self.net.forward(input, self.aux.as_ref(), self.mode)?;
        let loss = outs
            .iter()
            .zip(&self.proj)
            .map(|(o, p)| o.data().iter().zip(p.data()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        let g = self.net.backward(&self.proj)?;
        Ok((loss, g))
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        self.net.params_mut()
    }
}

struct MseObjective {
    target: Tensor<f64>,
}

impl Objective for MseObjective {
    fn loss(&mut self, input: &Tensor<f64>) -> Result<f64> {
        Ok(loss_mse(input, &self.target)?.0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        loss_mse(input, &self.target)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Vec::new()
    }
}

struct XentObjective {
    labels: Vec<usize>,
}

impl Objective for XentObjective {
    fn loss(&mut self, input: &Tensor<f64>) -> Result<f64> {
        Ok(loss_softmax_xent(input, &self.labels)?.0)
    }

    fn loss_and_grad(&mut self, input: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        loss_softmax_xent(input, &self.labels)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f64>> {
        Vec::new()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub suite: String,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    pub passed: bool,
}

impl SuiteResult {
    fn new(suite: &str, tolerance: f64, r: GradCheckReport) -> Self {
        SuiteResult {
            suite: suite.to_string(),
            tolerance,
            passed: r.max_rel_error < tolerance,
            max_rel_error: r.max_rel_error,
            worst: r.worst,
            checked: r.checked,
        }
    }
}

/// Names accepted by [`run_suite`].
pub const SUITES: [&str; 13] = [
    "dense",
    "activations",
    "mse",
    "softmax_xent",
    "conv_same",
    "conv_valid",
    "maxpool",
    "lrn",
    "batchnorm",
    "adaptive_conv",
    "adaptive_separable",
    "counting_network",
    "deconv_network",
];

fn spec(name: &str, input: [usize; 3], aux: Option<AuxKind>, trunk: Vec<LayerSpec>, heads: Vec<Vec<LayerSpec>>) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        input,
        aux,
        trunk,
        heads,
    }
}

fn adaptive(filters: usize, kh: usize, kw: usize, activation: Activation, padding: Padding, hidden: &[usize]) -> LayerSpec {
    LayerSpec::AdaptiveConv {
        filters,
        kh,
        kw,
        activation,
        padding,
        hidden: hidden.to_vec(),
    }
}

fn check_network(name: &str, tol: f64, s: ModelSpec, batch: usize, mode: Mode, rng: &mut Rng) -> Result<SuiteResult> {
    let (mut obj, input) = NetworkObjective::new(s, batch, mode, rng)?;
    Ok(SuiteResult::new(name, tol, grad_check(&mut obj, &input)?))
}

/// Runs one named suite in 64-bit with inputs drawn from `seed`.
pub fn run_suite(name: &str, seed: u64) -> Result<SuiteResult> {
    let rng = &mut rng_for(seed, "gradcheck", 0);
    let mode = Mode::Train;
    match name {
        "dense" => check_network(
            name,
            TOL_DENSE,
            spec(name, [1, 1, 6], None, vec![], vec![
                vec![LayerSpec::dense(5, Activation::Tanh), LayerSpec::dense(3, Activation::Identity)],
                vec![LayerSpec::dense(4, Activation::Sigmoid)],
            ]),
            3,
            mode,
            rng,
        ),
        "activations" => check_network(
            name,
            TOL_SPATIAL,
            spec(
                name,
                [2, 3, 4],
                None,
                vec![
                    LayerSpec::Activation { activation: Activation::leaky() },
                    LayerSpec::Activation { activation: Activation::Tanh },
                    LayerSpec::Activation { activation: Activation::Sigmoid },
                    LayerSpec::Activation { activation: Activation::Relu },
                ],
                vec![],
            ),
            2,
            mode,
            rng,
        ),
        "mse" => {
            let pred = random(rng, &[4, 3], -1.0, 1.0);
            let mut obj = MseObjective {
                target: random(rng, &[4, 3], -1.0, 1.0),
            };
            Ok(SuiteResult::new(name, TOL_DENSE, grad_check(&mut obj, &pred)?))
        }
        "softmax_xent" => {
            // moderate logits keep every class probability well above round-off level
            let logits = random(rng, &[2, 15], -1.0, 1.0);
            let labels = (0..2).map(|_| rng.gen_range(0..15)).collect();
            let mut obj = XentObjective { labels };
            Ok(SuiteResult::new(name, TOL_DENSE, grad_check(&mut obj, &logits)?))
        }
        "conv_same" => check_network(
            name,
            TOL_SPATIAL,
            spec(name, [2, 6, 7], None, vec![LayerSpec::StaticConv {
                filters: 3,
                kh: 3,
                kw: 5,
                activation: Activation::Tanh,
                padding: Padding::Same,
            }], vec![]),
            2,
            mode,
            rng,
        ),
        "conv_valid" => check_network(
            name,
            TOL_SPATIAL,
            spec(name, [3, 7, 6], None, vec![LayerSpec::StaticConv {
                filters: 2,
                kh: 5,
                kw: 3,
                activation: Activation::Identity,
                padding: Padding::Valid,
            }], vec![]),
            2,
            mode,
            rng,
        ),
        "maxpool" => check_network(
            name,
            TOL_SPATIAL,
            spec(name, [2, 5, 6], None, vec![LayerSpec::Pool], vec![]),
            2,
            mode,
            rng,
        ),
        "lrn" => check_network(
            name,
            TOL_SPATIAL,
            spec(name, [7, 3, 3], None, vec![LayerSpec::Lrn {
                config: LrnConfig {
                    alpha: 0.5,
                    ..LrnConfig::default()
                },
            }], vec![]),
            2,
            mode,
            rng,
        ),
        "batchnorm" => check_network(
            name,
            TOL_SPATIAL,
            spec(name, [3, 4, 3], None, vec![LayerSpec::BatchNorm], vec![]),
            3,
            mode,
            rng,
        ),
        "adaptive_conv" => check_network(
            name,
            TOL_ADAPTIVE,
            spec(
                name,
                [2, 6, 6],
                Some(AuxKind::AngleHeight),
                vec![adaptive(3, 3, 3, Activation::Relu, Padding::Same, &[4, 6])],
                vec![],
            ),
            3,
            mode,
            rng,
        ),
        "adaptive_separable" => check_network(
            name,
            TOL_ADAPTIVE,
            spec(
                name,
                [1, 7, 7],
                Some(AuxKind::KernelRadius),
                vec![
                    adaptive(2, 5, 1, Activation::Identity, Padding::Same, &[4, 8]),
                    adaptive(2, 1, 5, Activation::leaky(), Padding::Same, &[4, 8]),
                    adaptive(1, 1, 1, Activation::Sigmoid, Padding::Same, &[4, 8]),
                ],
                vec![],
            ),
            2,
            mode,
            rng,
        ),
        "counting_network" => check_network(
            name,
            TOL_ADAPTIVE,
            spec(
                name,
                [1, 9, 9],
                Some(AuxKind::Perspective),
                vec![
                    adaptive(2, 3, 3, Activation::Relu, Padding::Same, &[3, 5]),
                    LayerSpec::lrn(),
                    LayerSpec::Pool,
                    LayerSpec::StaticConv {
                        filters: 2,
                        kh: 3,
                        kw: 3,
                        activation: Activation::Relu,
                        padding: Padding::Same,
                    },
                    LayerSpec::Pool,
                ],
                vec![
                    vec![LayerSpec::dense(4, Activation::Relu), LayerSpec::dense(1, Activation::Identity)],
                    vec![LayerSpec::dense(3, Activation::Relu), LayerSpec::dense(15, Activation::Identity)],
                ],
            ),
            2,
            mode,
            rng,
        ),
        "deconv_network" => check_network(
            name,
            TOL_ADAPTIVE,
            spec(
                name,
                [1, 6, 6],
                Some(AuxKind::KernelRadius),
                vec![
                    adaptive(2, 3, 1, Activation::Identity, Padding::Same, &[4, 8]),
                    LayerSpec::BatchNorm,
                    LayerSpec::Activation { activation: Activation::leaky() },
                    adaptive(2, 1, 3, Activation::Identity, Padding::Same, &[4, 8]),
                    LayerSpec::BatchNorm,
                    LayerSpec::Activation { activation: Activation::leaky() },
                    adaptive(1, 1, 1, Activation::Sigmoid, Padding::Same, &[4, 8]),
                ],
                vec![],
            ),
            3,
            mode,
            rng,
        ),
        other => Err(invalid!("unknown gradient suite {other:?}; expected one of {}", SUITES.join(", "))),
    }
}

pub fn run_all_suites(seed: u64) -> Result<Vec<SuiteResult>> {
    SUITES.iter().map(|s| run_suite(s, seed)).collect()
}
