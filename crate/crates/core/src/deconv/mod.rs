//! Non-blind deconvolution of disk-blurred images with networks conditioned on the
//! blur radius.

pub mod corpus;
pub mod kernel;

pub use corpus::{procedural_corpus, procedural_image, read_corpus, read_image_folder, write_corpus, Corpus};
pub use kernel::{corrupt, disk_blur, psnr, Border, CorruptionConfig, DiskKernel, PSNR_CAP};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crowd::{AuxKind, AuxNormalizer, SceneContext};
use crate::error::{invalid, Error, Result};
use crate::model::{Model, Task};
use crate::network::{LayerSpec, ModelSpec};
use crate::nn::{adam_step, loss_mse, Activation, Mode, OptimizerConfig, Padding};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Filter length of the separable layers by default.
pub const DEFAULT_FILTER_LENGTH: usize = 121;
pub const ADAPTIVE_CHANNELS: usize = 12;
pub const PLAIN_CHANNELS: usize = 38;
/// Metadata key holding the comma-separated training radii.
pub const TRAIN_RADII_KEY: &str = "train_radii";
/// FMN hidden widths of the deconvolution layers; small so that the adaptive model's
/// parameter count stays close to the 38-channel plain model.
pub const DECONV_FMN_HIDDEN: [usize; 2] = [4, 8];

fn conv_layer(adaptive: bool, filters: usize, kh: usize, kw: usize, activation: Activation) -> LayerSpec {
    if adaptive {
        LayerSpec::AdaptiveConv {
            filters,
            kh,
            kw,
            activation,
            padding: Padding::Same,
            hidden: DECONV_FMN_HIDDEN.to_vec(),
        }
    } else {
        LayerSpec::StaticConv {
            filters,
            kh,
            kw,
            activation,
            padding: Padding::Same,
        }
    }
}

fn separable_spec(name: &str, adaptive: bool, channels: usize, length: usize, size: usize) -> Result<ModelSpec> {
    if length % 2 == 0 || length == 0 {
        return Err(invalid!("filter length {length} must be odd"));
    }
    let spec = ModelSpec {
        name: name.to_string(),
        input: [1, size, size],
        aux: adaptive.then_some(AuxKind::KernelRadius),
        trunk: vec![
            conv_layer(adaptive, channels, length, 1, Activation::Identity),
            LayerSpec::BatchNorm,
            LayerSpec::Activation {
                activation: Activation::leaky(),
            },
            conv_layer(adaptive, channels, 1, length, Activation::Identity),
            LayerSpec::BatchNorm,
            LayerSpec::Activation {
                activation: Activation::leaky(),
            },
            conv_layer(adaptive, 1, 1, 1, Activation::Sigmoid),
        ],
        heads: Vec::new(),
    };
    spec.trunk_output()?;
    Ok(spec)
}

/// Vertical `L x 1` then horizontal `1 x L` adaptive layers (12 filters each, batch norm
/// and leaky ReLU after each) and a 1x1 adaptive sigmoid fusion layer, driven by the
/// blur radius.
pub fn deconv_spec(filter_length: usize, size: usize) -> Result<ModelSpec> {
    separable_spec("deconv-acnn", true, ADAPTIVE_CHANNELS, filter_length, size)
}

/// The same topology with static layers of `channels` filters.
pub fn plain_deconv_spec(filter_length: usize, channels: usize, size: usize) -> Result<ModelSpec> {
    if channels == 0 {
        return Err(invalid!("plain deconvolution model needs at least one channel"));
    }
    separable_spec("deconv-cnn", false, channels, filter_length, size)
}

/// Produces deblurred images from blurred ones of a known disk radius.
pub trait Deblur: Sync {
    fn deblur(&self, blurred: &[Tensor<f64>], radius: usize) -> Result<Vec<Tensor<f64>>>;
}

/// Returns its input unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct PassThrough;

impl Deblur for PassThrough {
    fn deblur(&self, blurred: &[Tensor<f64>], _radius: usize) -> Result<Vec<Tensor<f64>>> {
        Ok(blurred.to_vec())
    }
}

fn image_batch(images: &[&Tensor<f64>]) -> Result<Tensor<f32>> {
    let (rows, cols) = images
        .first()
        .ok_or_else(|| invalid!("empty image batch"))?
        .dims2()?;
    let mut data = Vec::with_capacity(images.len() * rows * cols);
    for img in images {
        if img.dims2()? != (rows, cols) {
            return Err(invalid!("images in a batch must share one size"));
        }
        data.extend(img.data().iter().map(|&v| v as f32));
    }
    Tensor::from_vec(&[images.len(), 1, rows, cols], data)
}

fn radius_aux(model: &Model, radii: &[usize]) -> Result<Option<Tensor<f32>>> {
    let ctx = radii
        .iter()
        .map(|&r| SceneContext::kernel_radius(r as f64))
        .collect::<Result<Vec<_>>>()?;
    model.aux_batch(ctx.iter())
}

impl Deblur for Model {
    fn deblur(&self, blurred: &[Tensor<f64>], radius: usize) -> Result<Vec<Tensor<f64>>> {
        self.ensure_trained()?;
        if self.task != Task::Deconvolution {
            return Err(Error::Contract("deblurring needs a deconvolution model".into()));
        }
        let mut out = Vec::with_capacity(blurred.len());
        for chunk in blurred.chunks(8) {
            let refs: Vec<&Tensor<f64>> = chunk.iter().collect();
            let x = image_batch(&refs)?;
            let aux = radius_aux(self, &vec![radius; chunk.len()])?;
            let y = self.network.infer(&x, aux.as_ref())?.remove(0);
            let (n, _, rows, cols) = y.dims4()?;
            for i in 0..n {
                out.push(Tensor::from_vec(&[rows, cols], y.outer(i).iter().map(|&v| v as f64).collect())?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Train on random square crops of this side (whole images when `None`).
    pub crop: Option<usize>,
    /// Additive noise std of the training corruption.
    pub sigma: f64,
    /// Stop after this many epochs without a better validation PSNR.
    pub patience: usize,
}

impl Default for DeconvTrainConfig {
    fn default() -> Self {
        DeconvTrainConfig {
            epochs: 90,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerConfig::with_learning_rate(1e-3),
            crop: None,
            sigma: 0.01,
            patience: 25,
        }
    }
}

impl DeconvTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(invalid!("epochs and batch size must be positive"));
        }
        if self.crop == Some(0) {
            return Err(invalid!("crop size must be positive"));
        }
        if !(self.sigma >= 0.0) {
            return Err(invalid!("noise std must be non-negative"));
        }
        self.optimizer.validate()
    }
}

/// One training example: network input, desired output and the blur radius fed as
/// side information.
#[derive(Debug, Clone, PartialEq)]
pub struct DeconvPair {
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
    pub radius: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvEpoch {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_psnr: Option<f64>,
}

/// Fits the radius normalizer (adaptive models) if unset.
fn prepare(model: &mut Model, radii: &[usize], cfg: &DeconvTrainConfig) -> Result<()> {
    cfg.validate()?;
    if model.task != Task::Deconvolution {
        return Err(invalid!("deconvolution training needs a deconvolution model"));
    }
    if radii.is_empty() || radii.contains(&0) {
        return Err(invalid!("training radii must be a non-empty list of integers >= 1"));
    }
    if model.spec().aux.is_some() && model.normalizer.is_none() {
        let ctx = radii
            .iter()
            .map(|&r| SceneContext::kernel_radius(r as f64))
            .collect::<Result<Vec<_>>>()?;
        model.normalizer = Some(AuxNormalizer::fit(&ctx)?);
    }
    model.optimizer = cfg.optimizer;
    let list: Vec<String> = radii.iter().map(|r| r.to_string()).collect();
    model.metadata.insert(TRAIN_RADII_KEY.into(), list.join(","));
    Ok(())
}

/// One pass of mini-batch Adam over `pairs` in `order`; returns the mean batch MSE.
fn fit_epoch(model: &mut Model, pairs: &[DeconvPair], order: &[usize], cfg: &DeconvTrainConfig, epoch: usize) -> Result<f64> {
    let (mut sum, mut batches) = (0.0, 0usize);
    for idx in order.chunks(cfg.batch_size) {
        let inputs: Vec<&Tensor<f64>> = idx.iter().map(|&i| &pairs[i].input).collect();
        let targets: Vec<&Tensor<f64>> = idx.iter().map(|&i| &pairs[i].target).collect();
        let radii: Vec<usize> = idx.iter().map(|&i| pairs[i].radius).collect();
        let x = image_batch(&inputs)?;
        let t = image_batch(&targets)?;
        let aux = radius_aux(model, &radii)?;
        model.network.zero_grad();
        let y = model.network.forward(&x, aux.as_ref(), Mode::Train)?.remove(0);
        let (mse, g) = loss_mse(&y, &t)?;
        if !mse.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {batches}")));
        }
        model.network.backward(&[g])?;
        adam_step(&mut model.network.params_mut(), &mut model.optimizer)?;
        sum += mse;
        batches += 1;
    }
    Ok(sum / batches.max(1) as f64)
}

/// Trains on a fixed list of pairs; returns the per-epoch training MSE.
pub fn train_on_pairs(model: &mut Model, pairs: &[DeconvPair], cfg: &DeconvTrainConfig) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(invalid!("no training pairs"));
    }
    let radii: Vec<usize> = pairs.iter().map(|p| p.radius).collect();
    prepare(model, &radii, cfg)?;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, "deconv-epoch", epoch as u64));
        curve.push(fit_epoch(model, pairs, &order, cfg, epoch)?);
    }
    model.trained = true;
    Ok(curve)
}

fn crop(img: &Tensor<f64>, r0: usize, c0: usize, size: usize) -> Result<Tensor<f64>> {
    let (_, cols) = img.dims2()?;
    let data = (0..size * size)
        .map(|k| img.data()[(r0 + k / size) * cols + c0 + k % size])
        .collect();
    Tensor::from_vec(&[size, size], data)
}

/// Trains on freshly corrupted copies of `clean` every epoch (radius drawn from
/// `radii`, new noise each time). With validation images, keeps the parameters of the
/// epoch with the best mean PSNR over the training radii.
pub fn train_deconv(
    model: &mut Model,
    clean: &[Tensor<f64>],
    val: &[Tensor<f64>],
    radii: &[usize],
    cfg: &DeconvTrainConfig,
) -> Result<Vec<DeconvEpoch>> {
    if clean.is_empty() {
        return Err(invalid!("no training images"));
    }
    prepare(model, radii, cfg)?;
    let corruption = CorruptionConfig {
        radii: radii.to_vec(),
        sigma: cfg.sigma,
        seed: cfg.seed,
    };
    let val_corruption = CorruptionConfig {
        seed: cfg.seed ^ 0x5eed,
        ..corruption.clone()
    };
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let mut rng = rng_for(cfg.seed, "deconv-epoch", epoch as u64);
        let picks: Vec<(usize, u64)> = (0..clean.len())
            .map(|_| (radii[rng.gen_range(0..radii.len())], rng.gen()))
            .collect();
        let pairs = clean
            .par_iter()
            .zip(&picks)
            .enumerate()
            .map(|(i, (img, &(r, pos)))| {
                let stream = (epoch as u64) << 32 | i as u64;
                let blurred = corrupt(img, &corruption, r, stream)?;
                let (input, target) = match cfg.crop {
                    Some(s) => {
                        let (rows, cols) = img.dims2()?;
                        if s > rows || s > cols {
                            return Err(invalid!("crop {s} exceeds image {rows}x{cols}"));
                        }
                        let r0 = (pos % (rows - s + 1) as u64) as usize;
                        let c0 = ((pos >> 32) % (cols - s + 1) as u64) as usize;
                        (crop(&blurred, r0, c0, s)?, crop(img, r0, c0, s)?)
                    }
                    None => (blurred, img.clone()),
                };
                Ok(DeconvPair { input, target, radius: r })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut rng);
        let train_mse = fit_epoch(model, &pairs, &order, cfg, epoch)?;
        let val_psnr = if val.is_empty() {
            None
        } else {
            model.trained = true;
            let rows = eval_deconv(model, val, radii, radii, &val_corruption)?;
            model.trained = false;
            Some(rows.iter().map(|r| r.psnr_model).sum::<f64>() / rows.len() as f64)
        };
        logs.push(DeconvEpoch {
            epoch,
            train_mse,
            val_psnr,
        });
        if let Some(p) = val_psnr {
            if best.as_ref().map_or(true, |b| p > b.0) {
                best = Some((p, epoch, model.clone()));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
                break;
            }
        }
    }
    if let Some((_, _, kept)) = best {
        let optimizer = model.optimizer;
        *model = kept;
        model.optimizer = optimizer;
    }
    model.trained = true;
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvEvalRow {
    pub radius: usize,
    /// Whether the radius was among the training radii.
    pub seen: bool,
    pub psnr_blurred: f64,
    pub psnr_model: f64,
    pub delta: f64,
}

/// Mean PSNR of the corrupted input and of the model output against the clean images,
/// per radius. Image `k` uses noise stream `k` of `corruption` for every radius.
pub fn eval_deconv(
    model: &dyn Deblur,
    clean: &[Tensor<f64>],
    radii: &[usize],
    seen: &[usize],
    corruption: &CorruptionConfig,
) -> Result<Vec<DeconvEvalRow>> {
    if clean.is_empty() {
        return Err(invalid!("no evaluation images"));
    }
    radii
        .iter()
        .map(|&r| {
            let scores: Vec<(f64, f64)> = clean
                .par_iter()
                .enumerate()
                .map(|(k, img)| {
                    let blurred = corrupt(img, corruption, r, k as u64)?;
                    let restored = model.deblur(std::slice::from_ref(&blurred), r)?.remove(0);
                    Ok((psnr(img, &blurred)?, psnr(img, &restored)?))
                })
                .collect::<Result<_>>()?;
            let n = scores.len() as f64;
            let psnr_blurred = scores.iter().map(|s| s.0).sum::<f64>() / n;
            let psnr_model = scores.iter().map(|s| s.1).sum::<f64>() / n;
            Ok(DeconvEvalRow {
                radius: r,
                seen: seen.contains(&r),
                psnr_blurred,
                psnr_model,
                delta: psnr_model - psnr_blurred,
            })
        })
        .collect()
}
