//! Crowd-counting networks: preset architectures, multi-task training and evaluation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::crowd::{
    count_in_roi, extract_patch, make_density_map, patch_context, predict_region_counts,
    sample_patches, AuxKind, AuxNormalizer, DensityPredictor, GridSpec, Mask, PatchSample, Scene,
    COUNT_CLASSES,
};
use crate::error::{invalid, Error, Result};
use crate::model::{Model, Task};
use crate::network::{LayerSpec, ModelSpec};
use crate::nn::{adam_step, loss_mse, loss_softmax_xent, Activation, Mode, OptimizerConfig};
use crate::rng::rng_for;
use crate::tensor::Tensor;

/// Names accepted by [`preset_spec`].
pub const PRESETS: [&str; 5] = ["cnn64", "acnn-v1", "acnn-v2", "acnn-v3", "acnn-ah"];

/// Regression head widths `flatten -> 512 -> 81 -> 1`.
pub const REGRESSION_HEAD: [usize; 3] = [512, 81, 1];
/// Classification head widths `flatten -> 81 -> 15`.
pub const CLASSIFICATION_HEAD: [usize; 2] = [81, COUNT_CLASSES];

/// One conv + LRN + pool stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub filters: usize,
    pub kernel: usize,
    pub adaptive: bool,
}

impl Stage {
    pub fn fixed(filters: usize) -> Self {
        Stage {
            filters,
            kernel: 5,
            adaptive: false,
        }
    }

    pub fn adaptive(filters: usize) -> Self {
        Stage {
            filters,
            kernel: 5,
            adaptive: true,
        }
    }
}

fn head(widths: &[usize]) -> Vec<LayerSpec> {
    widths
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let act = if i + 1 == widths.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            LayerSpec::dense(w, act)
        })
        .collect()
}

/// Stages of ReLU conv, LRN and 2x2 max pooling, then a regression head and a
/// count-class head on the shared flattened features.
pub fn counting_spec(
    name: &str,
    patch: usize,
    stages: &[Stage],
    aux: Option<AuxKind>,
    regression: &[usize],
    classification: &[usize],
) -> Result<ModelSpec> {
    if regression.last() != Some(&1) {
        return Err(invalid!("regression head must end in one output"));
    }
    if classification.last() != Some(&COUNT_CLASSES) {
        return Err(invalid!("classification head must end in {COUNT_CLASSES} outputs"));
    }
    let mut trunk = Vec::new();
    for s in stages {
        trunk.push(if s.adaptive {
            LayerSpec::adaptive(s.filters, s.kernel, Activation::Relu)
        } else {
            LayerSpec::conv(s.filters, s.kernel, Activation::Relu)
        });
        trunk.push(LayerSpec::lrn());
        trunk.push(LayerSpec::Pool);
    }
    let uses_aux = stages.iter().any(|s| s.adaptive);
    let spec = ModelSpec {
        name: name.to_string(),
        input: [1, patch, patch],
        aux: if uses_aux { aux } else { None },
        trunk,
        heads: vec![head(regression), head(classification)],
    };
    spec.trunk_output()?;
    Ok(spec)
}

/// Architectures: plain CNN with two 64-filter stages; adaptive variants v1 (adaptive
/// first stage), v2 (adaptive second stage, 30 filters), v3 (both adaptive, 32 filters)
/// on 33x33 patches with perspective side information; and a three-stage 40/40/32
/// adaptive model on 65x65 patches driven by camera angle and height.
pub fn preset_spec(name: &str) -> Result<ModelSpec> {
    let p = Some(AuxKind::Perspective);
    let (r, c) = (&REGRESSION_HEAD[..], &CLASSIFICATION_HEAD[..]);
    match name {
        "cnn64" => counting_spec(name, 33, &[Stage::fixed(64), Stage::fixed(64)], None, r, c),
        "acnn-v1" => counting_spec(name, 33, &[Stage::adaptive(64), Stage::fixed(64)], p, r, c),
        "acnn-v2" => counting_spec(name, 33, &[Stage::fixed(64), Stage::adaptive(30)], p, r, c),
        "acnn-v3" => counting_spec(name, 33, &[Stage::adaptive(32), Stage::adaptive(32)], p, r, c),
        "acnn-ah" => counting_spec(
            name,
            65,
            &[Stage::adaptive(40), Stage::adaptive(40), Stage::adaptive(32)],
            Some(AuxKind::AngleHeight),
            r,
            c,
        ),
        other => Err(invalid!(
            "unknown model spec {other:?}; expected one of {}",
            PRESETS.join(", ")
        )),
    }
}

/// Patch size of a counting spec.
pub fn patch_size(spec: &ModelSpec) -> usize {
    spec.input[1]
}

/// Input batch `[N, 1, s, s]` from patch samples.
pub fn pixel_batch(samples: &[&PatchSample], patch: usize) -> Result<Tensor<f32>> {
    let mut data = Vec::with_capacity(samples.len() * patch * patch);
    for s in samples {
        if s.pixels.len() != patch * patch {
            return Err(invalid!("patch of {} pixels, model expects {patch}x{patch}", s.pixels.len()));
        }
        data.extend_from_slice(&s.pixels);
    }
    Tensor::from_vec(&[samples.len(), 1, patch, patch], data)
}

const INFER_CHUNK: usize = 256;

impl DensityPredictor for Model {
    fn predict_at(&self, scene: &Scene, centers: &[(usize, usize)]) -> Result<Vec<f64>> {
        self.ensure_trained()?;
        if self.task != Task::Counting {
            return Err(Error::Contract("density prediction needs a counting model".into()));
        }
        let patch = patch_size(self.spec());
        let mut out = Vec::with_capacity(centers.len());
        for chunk in centers.chunks(INFER_CHUNK) {
            let mut pixels = Vec::with_capacity(chunk.len() * patch * patch);
            for &(r, c) in chunk {
                pixels.extend(extract_patch(&scene.image, r, c, patch));
            }
            let x = Tensor::from_vec(&[chunk.len(), 1, patch, patch], pixels)?;
            let contexts = match self.spec().aux {
                Some(kind) => chunk
                    .iter()
                    .map(|&(r, _)| patch_context(scene, kind, r))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let aux = self.aux_batch(contexts.iter())?;
            let y = self.network.infer(&x, aux.as_ref())?;
            // density is nonnegative; negative outputs only add background error
            out.extend(y[0].data().iter().map(|&v| (v as f64).max(0.0) / self.target_scale));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the count-class cross-entropy.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    /// Stop after this many epochs without a better validation MAE.
    pub patience: usize,
    /// Density targets are multiplied by this for training.
    pub target_scale: f64,
    /// Prediction stride for validation counts.
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.1,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            patience: 10,
            target_scale: 100.0,
            eval_stride: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(invalid!("classification weight must be non-negative, got {}", self.lambda));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_stride == 0 {
            return Err(invalid!("epochs, batch size and eval stride must be positive"));
        }
        if !(self.target_scale > 0.0) {
            return Err(invalid!("target scale must be positive"));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of `mse + lambda * xent` over the epoch's batches (scaled targets).
    pub train_loss: f64,
    /// Regression MSE in density units.
    pub train_mse: f64,
    pub train_xent: f64,
    pub val_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

fn snapshot(model: &Model) -> Vec<Tensor<f32>> {
    model.network.params().iter().map(|p| p.value.clone()).collect()
}

fn restore(model: &mut Model, values: Vec<Tensor<f32>>) {
    for (p, v) in model.network.params_mut().into_iter().zip(values) {
        p.value = v;
    }
}

/// Mini-batch Adam on `mse(density) + lambda * xent(count class)`.
///
/// Fits the side-information normalizer on the training contexts when none is set.
/// With validation scenes, keeps the parameters of the epoch with the lowest count MAE
/// and stops after `patience` epochs without improvement.
pub fn train_counting(
    model: &mut Model,
    train: &[PatchSample],
    val: &[Scene],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if model.task != Task::Counting {
        return Err(invalid!("train_counting needs a counting model"));
    }
    if train.is_empty() {
        return Err(invalid!("no training samples"));
    }
    if model.spec().aux.is_some() && model.normalizer.is_none() {
        model.normalizer = Some(AuxNormalizer::fit(train.iter().map(|s| &s.context))?);
    }
    model.target_scale = cfg.target_scale;
    model.optimizer = cfg.optimizer;
    let patch = patch_size(model.spec());
    let scale = cfg.target_scale;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(cfg.seed, "epoch", epoch as u64));
        let (mut sum_loss, mut sum_mse, mut sum_xent, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PatchSample> = idx.iter().map(|&i| &train[i]).collect();
            let x = pixel_batch(&batch, patch)?;
            let aux = model.aux_batch(batch.iter().map(|s| &s.context))?;
            let target = Tensor::from_vec(
                &[batch.len(), 1],
                batch.iter().map(|s| (s.density * scale) as f32).collect(),
            )?;
            let labels: Vec<usize> = batch.iter().map(|s| s.class).collect();

            model.network.zero_grad();
            let out = model.network.forward(&x, aux.as_ref(), Mode::Train)?;
            let (mse, g_reg) = loss_mse(&out[0], &target)?;
            let (xent, mut g_cls) = loss_softmax_xent(&out[1], &labels)?;
            let loss = mse + cfg.lambda * xent;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {b}: mse {mse}, xent {xent}"
                )));
            }
            g_cls.scale(cfg.lambda as f32);
            model.network.backward(&[g_reg, g_cls])?;
            adam_step(&mut model.network.params_mut(), &mut model.optimizer)?;
            sum_loss += loss;
            sum_mse += mse / (scale * scale);
            sum_xent += xent;
            batches += 1;
        }
        let n = batches as f64;
        let val_mae = if val.is_empty() {
            None
        } else {
            model.trained = true;
            let mae = eval_counting(model, val, cfg.eval_stride, 0)?.mae;
            model.trained = false;
            if !mae.is_finite() {
                return Err(Error::Numeric(format!("non-finite validation MAE at epoch {epoch}")));
            }
            Some(mae)
        };
        logs.push(EpochLog {
            epoch,
            train_loss: sum_loss / n,
            train_mse: sum_mse / n,
            train_xent: sum_xent / n,
            val_mae,
        });
        if let Some(mae) = val_mae {
            let improved = best.as_ref().map_or(true, |(b, _, _)| mae < *b);
            if improved {
                best = Some((mae, epoch, snapshot(model)));
            } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
                break;
            }
        }
    }
    let best_epoch = match best {
        Some((_, epoch, values)) => {
            restore(model, values);
            epoch
        }
        None => logs.len(),
    };
    model.trained = true;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
    })
}

/// Patch samples from many scenes; scenes are processed in parallel, output order is
/// the scene order.
pub fn build_samples(
    scenes: &[Scene],
    kind: Option<AuxKind>,
    grid: &GridSpec,
    seed: u64,
) -> Result<Vec<PatchSample>> {
    let per_scene: Vec<Vec<PatchSample>> = scenes
        .par_iter()
        .map(|s| {
            let dmap = make_density_map(&s.annotation, &s.pmap)?;
            // plain models still carry a (perspective) context that is never used
            sample_patches(s, &dmap, kind.unwrap_or(AuxKind::Perspective), grid, seed)
        })
        .collect::<Result<_>>()?;
    Ok(per_scene.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub scene: String,
    pub true_count: f64,
    pub predicted: f64,
    pub region_true: Vec<f64>,
    pub region_predicted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: Vec<SceneEval>,
    pub mae: f64,
    /// One MAE per horizontal bar region (empty without regions).
    pub region_mae: Vec<f64>,
}

/// Per-scene counts over each scene's ROI and MAE. With `bars > 0`, the ROI is also split
/// into that many horizontal bars and per-bar MAEs are reported. Ground truth is the
/// integral of the ground-truth density over each region.
pub fn eval_counting(
    model: &dyn DensityPredictor,
    scenes: &[Scene],
    stride: usize,
    bars: usize,
) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(invalid!("no scenes to evaluate"));
    }
    let rows: Vec<SceneEval> = scenes
        .par_iter()
        .map(|s| {
            let dmap = make_density_map(&s.annotation, &s.pmap)?;
            let regions = if bars > 0 {
                Mask::bars(s.rows(), s.cols(), bars)?
                    .iter()
                    .map(|b| b.and(&s.roi))
                    .collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            let (predicted, region_predicted) =
                predict_region_counts(model, s, stride, &s.roi, &regions)?;
            Ok(SceneEval {
                scene: s.name.clone(),
                true_count: count_in_roi(&dmap, &s.roi)?,
                predicted,
                region_true: regions
                    .iter()
                    .map(|m| count_in_roi(&dmap, m))
                    .collect::<Result<_>>()?,
                region_predicted,
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mae = rows.iter().map(|r| (r.predicted - r.true_count).abs()).sum::<f64>() / n;
    let region_mae = (0..bars)
        .map(|b| {
            rows.iter()
                .map(|r| (r.region_predicted[b] - r.region_true[b]).abs())
                .sum::<f64>()
                / n
        })
        .collect();
    Ok(EvalReport {
        scenes: rows,
        mae,
        region_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crowd::{synth_scene, DensityOracle, SynthConfig};

    #[test]
    fn flatten_sizes() {
        assert_eq!(preset_spec("acnn-v3").unwrap().flatten_len().unwrap(), 2592);
        assert_eq!(preset_spec("cnn64").unwrap().flatten_len().unwrap(), 5184);
        assert_eq!(preset_spec("acnn-v2").unwrap().flatten_len().unwrap(), 2430);
        assert_eq!(preset_spec("acnn-ah").unwrap().flatten_len().unwrap(), 2592);
        assert!(preset_spec("vgg").is_err());
    }

    #[test]
    fn cnn64_table() {
        let t = preset_spec("cnn64").unwrap().param_table().unwrap();
        let want = [
            ("conv1", 1_664),
            ("conv2", 102_464),
            ("FC1", 2_654_720),
            ("FC2", 41_553),
            ("FC3", 82),
            ("FC4", 419_985),
            ("FC5", 1_230),
        ];
        for (name, n) in want {
            assert_eq!(t.get(name), Some(n), "{name}");
        }
        assert_eq!(t.total(), 3_221_780 - 82);
    }

    #[test]
    fn acnn_v3_table() {
        let t = preset_spec("acnn-v3").unwrap().param_table().unwrap();
        let want = [
            ("FMN1", 34_572),
            ("conv1", 0),
            ("FMN2", 1_051_372),
            ("conv2", 0),
            ("FC1", 1_327_616),
            ("FC2", 41_553),
            ("FC3", 82),
            ("FC4", 210_033),
            ("FC5", 1_230),
        ];
        for (name, n) in want {
            assert_eq!(t.get(name), Some(n), "{name}");
        }
        assert_eq!(t.total(), 2_666_540 - 82);
        let rows: Vec<_> = t.rows.iter().filter(|r| r.name.starts_with("FMN")).map(|r| r.outputs).collect();
        assert_eq!(rows, vec![832, 25_632]);
    }

    #[test]
    fn variant_fmn_outputs() {
        let v1 = preset_spec("acnn-v1").unwrap().param_table().unwrap();
        assert_eq!(v1.rows[0].outputs, 1_664);
        let v2 = preset_spec("acnn-v2").unwrap().param_table().unwrap();
        let fmn2 = v2.rows.iter().find(|r| r.name == "FMN2").unwrap();
        assert_eq!(fmn2.outputs, 48_030);
    }

    #[test]
    fn parameter_parity() {
        let a = preset_spec("acnn-v3").unwrap().param_table().unwrap().total() as f64;
        let c = preset_spec("cnn64").unwrap().param_table().unwrap().total() as f64;
        assert!((a - c).abs() / c < 0.2);
    }

    #[test]
    fn untrained_model_refuses_to_predict() {
        let spec = counting_spec("t", 9, &[Stage::fixed(2)], None, &[4, 1], &[4, 15]).unwrap();
        let model = Model::new(Task::Counting, &spec, 0).unwrap();
        let scene = synth_scene(&SynthConfig::default(), "s", -30.0, 5.0, 3, 0).unwrap();
        assert!(matches!(
            crate::crowd::predict_count(&model, &scene, 4, &scene.roi),
            Err(Error::Untrained)
        ));
    }

    #[test]
    fn oracle_eval_is_nearly_exact_and_regions_add_up() {
        let cfg = SynthConfig::default();
        let scenes: Vec<Scene> = (0..4)
            .map(|i| synth_scene(&cfg, &format!("s{i}"), -20.0 - 10.0 * i as f64, 4.0, 10 + i, i as u64).unwrap())
            .collect();
        let report = eval_counting(&DensityOracle, &scenes, 4, 3).unwrap();
        assert!(report.mae < 0.05, "{}", report.mae);
        for row in &report.scenes {
            assert_eq!(row.region_predicted.iter().sum::<f64>(), row.predicted);
        }
        assert_eq!(report.region_mae.len(), 3);
    }
}
