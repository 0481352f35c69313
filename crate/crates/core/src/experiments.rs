//! Small reproducible benchmarks comparing adaptive and plain networks.

use serde::{Deserialize, Serialize};

use crate::counting::{counting_spec, eval_counting, build_samples, train_counting, EpochLog, Stage, TrainConfig};
use crate::crowd::{synth_scene, AuxKind, GridSpec, Scene, SynthConfig};
use crate::error::{invalid, Result};
use crate::geometry::estimate_perspective_map;
use crate::model::{Model, Task};
use crate::network::ModelSpec;
use crate::nn::OptimizerConfig;
use crate::rng::rng_for;

use rand::Rng as _;

/// Synthetic multi-context counting benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingBench {
    /// Number of (tilt, height) camera contexts.
    pub contexts: usize,
    /// Center-row perspective values of the contexts are spread over this range.
    pub center_perspective: (f64, f64),
    pub train_per_context: usize,
    pub val_per_context: usize,
    pub test_per_context: usize,
    /// Inclusive range of people per scene.
    pub people: (usize, usize),
    pub patch: usize,
    pub filters: usize,
    pub regression: Vec<usize>,
    pub classification: Vec<usize>,
    pub sample_stride: usize,
    pub max_patches_per_scene: Option<usize>,
    pub train: TrainConfig,
}

impl Default for CountingBench {
    fn default() -> Self {
        CountingBench {
            contexts: 12,
            center_perspective: (5.0, 14.0),
            train_per_context: 8,
            val_per_context: 2,
            test_per_context: 2,
            people: (10, 60),
            patch: 33,
            filters: 8,
            regression: vec![64, 16, 1],
            classification: vec![16, 15],
            sample_stride: 6,
            max_patches_per_scene: Some(64),
            train: TrainConfig {
                epochs: 20,
                optimizer: OptimizerConfig::with_learning_rate(1e-3),
                eval_stride: 8,
                ..TrainConfig::default()
            },
        }
    }
}

/// Camera contexts `(tilt, height)` with tilts spread over `[-65, -10]` and heights chosen
/// so the center-row perspective values are spread over `range`, interleaved so that
/// tilt and perspective are not sorted together.
pub fn context_grid(n: usize, range: (f64, f64), cfg: &SynthConfig) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(invalid!("need at least one context"));
    }
    let (lo, hi) = range;
    if !(lo > 0.0 && hi >= lo) {
        return Err(invalid!("bad perspective range {range:?}"));
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = if n == 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
        let angle = -10.0 - 55.0 * t;
        // visit perspective targets in a stride-5 permutation
        let k = (i * 5) % n;
        let u = if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
        // perspective scales as 1/height, so the reachable range at this tilt is bounded
        let at_one_meter = estimate_perspective_map(&cfg.camera(angle, 1.0))?.center();
        let (reach_lo, reach_hi) = (at_one_meter / 16.0, at_one_meter / 2.2);
        let (a, b) = (lo.max(reach_lo), hi.min(reach_hi));
        let target = if a <= b {
            a * (b / a).powf(u)
        } else if hi < reach_lo {
            reach_lo
        } else {
            reach_hi
        };
        let height = (at_one_meter / target).clamp(2.2, 16.0);
        out.push((angle, height));
    }
    Ok(out)
}

/// Center-row perspective value of a context.
pub fn context_perspective(cfg: &SynthConfig, (angle, height): (f64, f64)) -> Result<f64> {
    Ok(estimate_perspective_map(&cfg.camera(angle, height))?.center())
}

#[derive(Debug, Clone)]
pub struct BenchData {
    pub contexts: Vec<(f64, f64)>,
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
    /// Context index of every test scene.
    pub test_context: Vec<usize>,
    pub train_context: Vec<usize>,
    pub val_context: Vec<usize>,
}

pub fn bench_data(bench: &CountingBench, cfg: &SynthConfig, seed: u64) -> Result<BenchData> {
    let contexts = context_grid(bench.contexts, bench.center_perspective, cfg)?;
    let mut rng = rng_for(seed, "bench/people", 0);
    let mut split = |tag: &str, per: usize| -> Result<(Vec<Scene>, Vec<usize>)> {
        let mut scenes = Vec::new();
        let mut ctx = Vec::new();
        for (c, &(angle, height)) in contexts.iter().enumerate() {
            for k in 0..per {
                let n = rng.gen_range(bench.people.0..=bench.people.1);
                let name = format!("{tag}-c{c:02}-{k:02}");
                let scene_seed = crate::rng::derive_seed(seed, &name, 0);
                scenes.push(synth_scene(cfg, &name, angle, height, n, scene_seed)?);
                ctx.push(c);
            }
        }
        Ok((scenes, ctx))
    };
    let (train, train_context) = split("train", bench.train_per_context)?;
    let (val, val_context) = split("val", bench.val_per_context)?;
    let (test, test_context) = split("test", bench.test_per_context)?;
    Ok(BenchData {
        contexts,
        train,
        val,
        test,
        test_context,
        train_context,
        val_context,
    })
}

impl CountingBench {
    pub fn adaptive_spec(&self) -> Result<ModelSpec> {
        counting_spec(
            "bench-acnn",
            self.patch,
            &[Stage::adaptive(self.filters), Stage::adaptive(self.filters)],
            Some(AuxKind::Perspective),
            &self.regression,
            &self.classification,
        )
    }

    pub fn plain_spec(&self, filters: usize) -> Result<ModelSpec> {
        counting_spec(
            "bench-cnn",
            self.patch,
            &[Stage::fixed(filters), Stage::fixed(filters)],
            None,
            &self.regression,
            &self.classification,
        )
    }

    /// Plain CNN whose parameter count is closest to the adaptive model's.
    pub fn matched_plain_spec(&self) -> Result<ModelSpec> {
        let target = self.adaptive_spec()?.param_table()?.total() as i64;
        let mut best: Option<(i64, ModelSpec)> = None;
        for f in 1..=256 {
            let spec = self.plain_spec(f)?;
            let gap = (spec.param_table()?.total() as i64 - target).abs();
            if best.as_ref().map_or(true, |(g, _)| gap < *g) {
                best = Some((gap, spec));
            }
        }
        Ok(best.expect("searched at least one width").1)
    }

    fn grid(&self) -> GridSpec {
        GridSpec {
            patch: self.patch,
            stride: self.sample_stride,
            max_per_scene: self.max_patches_per_scene,
        }
    }
}

/// Outcome of training one model on a benchmark split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingRun {
    pub model: String,
    pub params: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Test MAE over all test scenes.
    pub mae: f64,
    /// Test MAE over scenes whose context was used for training.
    pub seen_mae: f64,
    /// Test MAE over scenes from held-out contexts (NaN without a holdout).
    pub unseen_mae: f64,
    pub log: Vec<EpochLog>,
}

/// Trains `spec` on the training scenes of contexts not in `holdout`, early-stopping on
/// validation scenes from the same contexts, and scores it on every test scene.
pub fn run_counting(
    bench: &CountingBench,
    data: &BenchData,
    spec: &ModelSpec,
    holdout: &[usize],
    seed: u64,
) -> Result<CountingRun> {
    let keep = |scenes: &[Scene], ctx: &[usize]| -> Vec<Scene> {
        scenes
            .iter()
            .zip(ctx)
            .filter(|(_, c)| !holdout.contains(c))
            .map(|(s, _)| s.clone())
            .collect()
    };
    let train_scenes = keep(&data.train, &data.train_context);
    let val_scenes = keep(&data.val, &data.val_context);
    let samples = build_samples(&train_scenes, spec.aux, &bench.grid(), seed)?;
    let mut model = Model::new(Task::Counting, spec, seed)?;
    let cfg = TrainConfig {
        seed,
        ..bench.train
    };
    let report = train_counting(&mut model, &samples, &val_scenes, &cfg)?;
    let eval = eval_counting(&model, &data.test, bench.train.eval_stride.min(4), 0)?;
    let mae_of = |pick: &dyn Fn(usize) -> bool| {
        let errs: Vec<f64> = eval
            .scenes
            .iter()
            .zip(&data.test_context)
            .filter(|(_, &c)| pick(c))
            .map(|(r, _)| (r.predicted - r.true_count).abs())
            .collect();
        if errs.is_empty() {
            f64::NAN
        } else {
            errs.iter().sum::<f64>() / errs.len() as f64
        }
    };
    Ok(CountingRun {
        model: spec.name.clone(),
        params: spec.param_table()?.total(),
        epochs_run: report.epochs.len(),
        best_epoch: report.best_epoch,
        mae: eval.mae,
        seen_mae: mae_of(&|c| !holdout.contains(&c)),
        unseen_mae: mae_of(&|c| holdout.contains(&c)),
        log: report.epochs,
    })
}

/// Indices of the middle third of contexts ordered by center-row perspective.
pub fn middle_third(contexts: &[(f64, f64)], cfg: &SynthConfig) -> Result<Vec<usize>> {
    let mut order: Vec<(f64, usize)> = contexts
        .iter()
        .enumerate()
        .map(|(i, &c)| Ok((context_perspective(cfg, c)?, i)))
        .collect::<Result<_>>()?;
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = order.len();
    let (lo, hi) = (n / 3, n - n / 3);
    let mut mid: Vec<usize> = order[lo..hi].iter().map(|&(_, i)| i).collect();
    mid.sort_unstable();
    Ok(mid)
}
