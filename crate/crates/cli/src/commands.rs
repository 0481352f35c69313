//! Subcommand implementations.

use std::path::{Path, PathBuf};

use acnn::adaptive::write_probe_csv;
use acnn::catalog::{named_spec, SpecOptions};
use acnn::checkpoint::{load_checkpoint, save_checkpoint};
use acnn::counting::{
    build_samples, eval_counting, patch_size, train_counting, TrainConfig, PRESETS,
};
use acnn::crowd::context::LIMIT;
use acnn::crowd::io::{read_dataset, write_dataset};
use acnn::crowd::sampling::GridSpec;
use acnn::crowd::{AuxKind, SceneContext, Scene, SynthConfig};
use acnn::deconv::corpus::{procedural_corpus, read_corpus, write_corpus, write_images};
use acnn::deconv::kernel::{corrupt, psnr, CorruptionConfig};
use acnn::deconv::{eval_deconv, train_deconv, DeconvTrainConfig, TRAIN_RADII_KEY};
use acnn::diagnostics::{run_all_suites, run_suite, SUITES};
use acnn::experiments::{bench_data, CountingBench};
use acnn::geometry::{estimate_perspective_map, CameraExtrinsics};
use acnn::model::{Model, Task};
use acnn::network::format_count;
use acnn::nn::OptimizerConfig;
use acnn::{pgm, Precision, Tensor};
use rayon::prelude::*;

use crate::cli::{self, Command};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// The effective run config, saved next to each trained checkpoint.
pub const RUN_CONFIG_FILE: &str = "run.toml";

pub fn dispatch(command: Command, cfg: &RunConfig) -> CliResult {
    match command {
        Command::GenSynth(a) => gen_synth(a, cfg),
        Command::GenDeconvData(a) => gen_deconv_data(a, cfg),
        Command::TrainCount(a) => train_count(a, cfg),
        Command::EvalCount(a) => eval_count(a, cfg),
        Command::TrainDeconv(a) => train_deconv_cmd(a, cfg),
        Command::EvalDeconv(a) => eval_deconv_cmd(a, cfg),
        Command::Params(a) => params(a, cfg),
        Command::Perspective(a) => perspective(a, cfg),
        Command::Gradcheck(a) => gradcheck(a, cfg),
        Command::ManifoldProbe(a) => manifold_probe(a, cfg),
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn precision(text: &str) -> CliResult<Precision> {
    match text {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(invalid(format!("precision must be f32 or f64, got {other:?}"))),
    }
}

/// Checks `--precision` parses and, when `only` is set, that it names that precision.
fn require_precision(cfg: &RunConfig, only: Option<Precision>) -> CliResult {
    let p = precision(&cfg.precision)?;
    match only {
        Some(want) if want != p => Err(invalid(format!(
            "{} runs in {want} only, got --precision {p}",
            cfg.command
        ))),
        _ => Ok(()),
    }
}

/// Refuses to overwrite `path` unless `force`.
fn check_target(path: &Path, force: bool) -> CliResult {
    if path.exists() && !force {
        return Err(acnn::Error::PathExists(path.to_path_buf()).into());
    }
    Ok(())
}

/// CSV text from a header row and records.
fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the effective config as `#` lines followed by `body`, to `path` or stdout.
fn emit(path: Option<&Path>, cfg: &RunConfig, body: &str) -> CliResult {
    let mut text = cfg.header_lines().join("\n");
    text.push('\n');
    text.push_str(body);
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Deconvolution reports state which corruption stages were applied.
const CORRUPTION_NOTE: &str = "# corruption=disk blur, gaussian noise, clamp; no jpeg stage\n";

fn f(v: f64) -> String {
    format!("{v:.6}")
}

fn gen_synth(a: cli::GenSynth, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, None)?;
    check_target(&a.out, a.force)?;
    if a.people_min > a.people_max {
        return Err(invalid("--people-min exceeds --people-max"));
    }
    let bench = CountingBench {
        contexts: a.contexts,
        train_per_context: a.train_per_context,
        val_per_context: a.val_per_context,
        test_per_context: a.test_per_context,
        people: (a.people_min, a.people_max),
        ..CountingBench::default()
    };
    let synth = SynthConfig {
        rows: a.rows,
        cols: a.cols,
        fov_deg: a.fov,
        ..SynthConfig::default()
    };
    let data = bench_data(&bench, &synth, a.common.seed)?;
    let mut rows = Vec::new();
    for (split, scenes, ctx) in [
        ("train", &data.train, &data.train_context),
        ("val", &data.val, &data.val_context),
        ("test", &data.test, &data.test_context),
    ] {
        write_dataset(&a.out.join(split), scenes)?;
        for (s, &c) in scenes.iter().zip(ctx) {
            let (angle, height) = data.contexts[c];
            rows.push(vec![
                split.to_string(),
                s.name.clone(),
                c.to_string(),
                f(angle),
                f(height),
                s.roi_count().to_string(),
            ]);
        }
    }
    let n = data.train.len() + data.val.len() + data.test.len();
    eprintln!("wrote {n} scenes over {} contexts to {}", data.contexts.len(), a.out.display());
    let body = csv_text(&["split", "scene", "context", "angle_deg", "height_m", "count"], rows)?;
    emit(Some(&a.out.join("scenes_summary.csv")), cfg, &body)
}

fn gen_deconv_data(a: cli::GenDeconvData, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, None)?;
    check_target(&a.out, a.force)?;
    let corpus = procedural_corpus([a.n, a.n_val, a.n_test], a.size, a.common.seed)?;
    write_corpus(&a.out, &corpus)?;
    let corruption = CorruptionConfig {
        radii: a.radii.clone(),
        sigma: a.sigma,
        seed: a.common.seed,
    };
    let mut rows = Vec::new();
    for &r in &a.radii {
        let blurred = corpus
            .test
            .par_iter()
            .enumerate()
            .map(|(k, img)| corrupt(img, &corruption, r, k as u64))
            .collect::<acnn::Result<Vec<_>>>()?;
        write_images(&a.out.join(format!("test_r{r}")), &blurred)?;
        let mean = if blurred.is_empty() {
            f64::NAN
        } else {
            let scores = corpus
                .test
                .iter()
                .zip(&blurred)
                .map(|(c, b)| psnr(c, b))
                .collect::<acnn::Result<Vec<_>>>()?;
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        rows.push(vec![r.to_string(), blurred.len().to_string(), f(mean)]);
    }
    eprintln!(
        "wrote {}/{}/{} images of {}x{} to {}",
        a.n,
        a.n_val,
        a.n_test,
        a.size,
        a.size,
        a.out.display()
    );
    let body = csv_text(&["radius", "images", "psnr_blurred"], rows)?;
    emit(Some(&a.out.join("corruption_summary.csv")), cfg, &format!("{CORRUPTION_NOTE}{body}"))
}

/// `dir/sub` when it exists, else `dir` itself.
fn split_dir(dir: &Path, sub: &str) -> PathBuf {
    let p = dir.join(sub);
    if p.is_dir() {
        p
    } else {
        dir.to_path_buf()
    }
}

fn load_scenes(dir: &Path) -> CliResult<Vec<Scene>> {
    if !dir.is_dir() {
        return Err(invalid(format!("data directory {} does not exist", dir.display())));
    }
    Ok(read_dataset(dir)?)
}

fn train_count(a: cli::TrainCount, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F32))?;
    check_target(&a.out, a.force)?;
    let (task, spec) = named_spec(&a.spec, &SpecOptions::default())?;
    if task != Task::Counting {
        return Err(invalid(format!("{} is not a counting model", a.spec)));
    }
    let train = load_scenes(&split_dir(&a.data, "train"))?;
    let val_dir = a.data.join("val");
    let val = if val_dir.is_dir() { read_dataset(&val_dir)? } else { Vec::new() };
    let grid = GridSpec {
        patch: patch_size(&spec),
        stride: a.sample_stride,
        max_per_scene: (a.max_patches > 0).then_some(a.max_patches),
    };
    let samples = build_samples(&train, spec.aux, &grid, a.common.seed)?;
    let mut model = Model::new(Task::Counting, &spec, a.common.seed)?;
    let train_cfg = TrainConfig {
        lambda: a.lambda,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        optimizer: OptimizerConfig::with_learning_rate(a.lr),
        patience: a.patience,
        target_scale: a.target_scale,
        eval_stride: a.eval_stride,
    };
    eprintln!(
        "training {} ({} params) on {} patches from {} scenes",
        spec.name,
        format_count(model.network.param_count()),
        samples.len(),
        train.len()
    );
    let report = train_counting(&mut model, &samples, &val, &train_cfg)?;
    model.metadata.insert("spec_name".into(), a.spec.clone());
    save_checkpoint(&model, &a.out, a.force)?;
    std::fs::write(a.out.join(RUN_CONFIG_FILE), cfg.to_toml())?;
    let rows = report.epochs.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            f(e.train_loss),
            format!("{:.6e}", e.train_mse),
            f(e.train_xent),
            e.val_mae.map(f).unwrap_or_default(),
        ]
    });
    let body = csv_text(&["epoch", "train_loss", "train_mse", "train_xent", "val_mae"], rows)?;
    eprintln!("kept epoch {}; checkpoint {}", report.best_epoch, a.out.display());
    emit(a.log.as_deref(), cfg, &body)
}

fn load_model(path: &Path, task: Task) -> CliResult<Model> {
    let model = load_checkpoint(path)?;
    if model.task != task {
        return Err(invalid(format!(
            "{} holds a {:?} model, expected {task:?}",
            path.display(),
            model.task
        )));
    }
    Ok(model)
}

fn eval_count(a: cli::EvalCount, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F32))?;
    let model = load_model(&a.ckpt, Task::Counting)?;
    let scenes = load_scenes(&split_dir(&a.data, "test"))?;
    let report = eval_counting(&model, &scenes, a.stride, a.bars)?;
    let mut header = vec!["scene".to_string(), "true_count".into(), "predicted".into(), "abs_error".into()];
    for b in 0..a.bars {
        header.push(format!("true_bar{b}"));
        header.push(format!("predicted_bar{b}"));
    }
    let rows = report.scenes.iter().map(|s| {
        let mut row = vec![
            s.scene.clone(),
            f(s.true_count),
            f(s.predicted),
            f((s.predicted - s.true_count).abs()),
        ];
        for (t, p) in s.region_true.iter().zip(&s.region_predicted) {
            row.push(f(*t));
            row.push(f(*p));
        }
        row
    });
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let body = csv_text(&header, rows)?;
    eprintln!("MAE {:.4} over {} scenes", report.mae, report.scenes.len());
    for (b, m) in report.region_mae.iter().enumerate() {
        eprintln!("  bar {b}: MAE {m:.4}");
    }
    emit(a.report.as_deref(), cfg, &body)
}

fn train_deconv_cmd(a: cli::TrainDeconv, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F32))?;
    check_target(&a.out, a.force)?;
    let (train, val) = match &a.data {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(invalid(format!("data directory {} does not exist", dir.display())));
            }
            let c = read_corpus(dir)?;
            (c.train, c.val)
        }
        None => {
            let c = procedural_corpus([a.n, a.n_val, 0], a.size, a.common.seed)?;
            (c.train, c.val)
        }
    };
    let size = match train.first() {
        Some(img) => img.dims2()?.0,
        None => return Err(invalid("no training images")),
    };
    let opts = SpecOptions {
        filter_length: a.filter_length,
        image_size: size,
        plain_channels: a.channels,
    };
    let (task, spec) = named_spec(&a.spec, &opts)?;
    if task != Task::Deconvolution {
        return Err(invalid(format!("{} is not a deconvolution model", a.spec)));
    }
    let mut model = Model::new(Task::Deconvolution, &spec, a.common.seed)?;
    let train_cfg = DeconvTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed: a.common.seed,
        optimizer: OptimizerConfig::with_learning_rate(a.lr),
        crop: (a.crop > 0).then_some(a.crop),
        sigma: a.sigma,
        patience: a.patience,
    };
    eprintln!(
        "training {} ({} params) on {} images",
        spec.name,
        format_count(model.network.param_count()),
        train.len()
    );
    let log = train_deconv(&mut model, &train, &val, &a.radii, &train_cfg)?;
    model.metadata.insert("spec_name".into(), a.spec.clone());
    save_checkpoint(&model, &a.out, a.force)?;
    std::fs::write(a.out.join(RUN_CONFIG_FILE), cfg.to_toml())?;
    let rows = log.iter().map(|e| {
        vec![
            e.epoch.to_string(),
            format!("{:.6e}", e.train_mse),
            e.val_psnr.map(f).unwrap_or_default(),
        ]
    });
    let body = csv_text(&["epoch", "train_mse", "val_psnr"], rows)?;
    eprintln!("checkpoint {}", a.out.display());
    emit(a.log.as_deref(), cfg, &format!("{CORRUPTION_NOTE}{body}"))
}

fn eval_deconv_cmd(a: cli::EvalDeconv, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F32))?;
    let model = load_model(&a.ckpt, Task::Deconvolution)?;
    let seen: Vec<usize> = match model.metadata.get(TRAIN_RADII_KEY) {
        Some(list) => list
            .split(',')
            .map(|s| s.parse().map_err(|_| CliError::Runtime(format!("bad {TRAIN_RADII_KEY} {list:?}"))))
            .collect::<CliResult<_>>()?,
        None => Vec::new(),
    };
    let test = match &a.data {
        Some(dir) => {
            if !dir.is_dir() {
                return Err(invalid(format!("data directory {} does not exist", dir.display())));
            }
            read_corpus(dir)?.test
        }
        None => procedural_corpus([0, 0, a.n_test], a.size, a.common.seed)?.test,
    };
    let corruption = CorruptionConfig {
        radii: a.radii.clone(),
        sigma: a.sigma,
        seed: a.common.seed,
    };
    let rows = eval_deconv(&model, &test, &a.radii, &seen, &corruption)?;
    for r in &rows {
        eprintln!(
            "r={:<3} {:<6} blurred {:.3} dB  restored {:.3} dB  delta {:+.3}",
            r.radius,
            if r.seen { "seen" } else { "unseen" },
            r.psnr_blurred,
            r.psnr_model,
            r.delta
        );
    }
    let records = rows.iter().map(|r| {
        vec![
            r.radius.to_string(),
            r.seen.to_string(),
            f(r.psnr_blurred),
            f(r.psnr_model),
            f(r.delta),
        ]
    });
    let body = csv_text(&["radius", "seen", "psnr_blurred", "psnr_model", "delta"], records)?;
    emit(a.report.as_deref(), cfg, &format!("{CORRUPTION_NOTE}{body}"))
}

fn params(a: cli::Params, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, None)?;
    let opts = SpecOptions {
        filter_length: a.filter_length,
        plain_channels: a.channels,
        ..SpecOptions::default()
    };
    let (_, spec) = named_spec(&a.spec, &opts)?;
    let table = spec.param_table()?;
    let width = table.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  {:>12}  {:>8}", "layer", "params", "outputs");
    for r in &table.rows {
        println!("{:<width$}  {:>12}  {:>8}", r.name, format_count(r.params), r.outputs);
    }
    println!("{:<width$}  {:>12}", "total", format_count(table.total()));
    if PRESETS.contains(&a.spec.as_str()) {
        println!(
            "note: FC5 maps 81 -> 15 classes ({} params); a 16-way FC5 ({} params, +82) gives {}",
            format_count(81 * 15 + 15),
            format_count(81 * 16 + 16),
            format_count(table.total() + 82)
        );
    }
    if let Some(path) = a.report.as_deref() {
        let mut rows: Vec<Vec<String>> = table
            .rows
            .iter()
            .map(|r| vec![r.name.clone(), r.params.to_string(), r.outputs.to_string()])
            .collect();
        rows.push(vec!["total".into(), table.total().to_string(), String::new()]);
        emit(Some(path), cfg, &csv_text(&["layer", "params", "outputs"], rows)?)?;
    }
    Ok(())
}

fn perspective(a: cli::Perspective, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, None)?;
    let cam = CameraExtrinsics::new(a.angle, a.height, a.fov, a.rows, a.cols);
    cam.validate()?;
    let map = estimate_perspective_map(&cam)?;
    if let Some(p) = a.pgm.as_deref() {
        pgm::write_gray16_scaled(p, map.rows, map.cols, map.values().data())?;
    }
    let rows = map
        .row_values
        .iter()
        .enumerate()
        .map(|(r, v)| vec![r.to_string(), f(cam.ray_angle_deg(r)), format!("{v:.9}")]);
    let body = csv_text(&["row", "ray_angle_deg", "perspective"], rows)?;
    eprintln!(
        "perspective {:.4} (top) .. {:.4} (bottom), center {:.4} px/m",
        map.row_values[0],
        map.row_values[map.rows - 1],
        map.center()
    );
    emit(a.report.as_deref(), cfg, &body)
}

fn gradcheck(a: cli::Gradcheck, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F64))?;
    let results = match (&a.suite, a.all) {
        (Some(name), _) => {
            if !SUITES.contains(&name.as_str()) {
                return Err(invalid(format!(
                    "unknown suite {name:?}; expected one of {}",
                    SUITES.join(", ")
                )));
            }
            vec![run_suite(name, a.common.seed)?]
        }
        (None, true) => run_all_suites(a.common.seed)?,
        (None, false) => return Err(invalid("pass --all or --suite NAME")),
    };
    for r in &results {
        eprintln!(
            "{} {:<20} max rel {:.3e} (tol {:.0e}, {} checked, worst {})",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.max_rel_error,
            r.tolerance,
            r.checked,
            r.worst
        );
    }
    let rows = results.iter().map(|r| {
        vec![
            r.suite.clone(),
            format!("{:e}", r.tolerance),
            format!("{:.6e}", r.max_rel_error),
            r.worst.clone(),
            r.checked.to_string(),
            r.passed.to_string(),
        ]
    });
    let body = csv_text(&["suite", "tolerance", "max_rel_error", "worst", "checked", "passed"], rows)?;
    emit(a.report.as_deref(), cfg, &body)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient suite(s) failed")));
    }
    Ok(())
}

fn manifold_probe(a: cli::ManifoldProbe, cfg: &RunConfig) -> CliResult {
    require_precision(cfg, Some(Precision::F32))?;
    if a.steps < 2 {
        return Err(invalid("--steps must be at least 2"));
    }
    let model = load_checkpoint(&a.ckpt)?;
    let layers = model.network.adaptive_layers();
    let layer = a
        .layer
        .checked_sub(1)
        .and_then(|i| layers.get(i))
        .ok_or_else(|| invalid(format!("model has {} adaptive layers; --layer {} is out of range", layers.len(), a.layer)))?;
    let norm = model
        .normalizer
        .as_ref()
        .ok_or_else(|| CliError::Runtime("checkpoint has no side-information normalizer".into()))?;
    // the sweep follows the first aux component; others stay fixed
    let lo = a.aux_min.unwrap_or(norm.center[0] - LIMIT * norm.scale[0]);
    let hi = a.aux_max.unwrap_or(norm.center[0] + LIMIT * norm.scale[0]);
    if !(lo < hi) {
        return Err(invalid(format!("empty aux range [{lo}, {hi}]")));
    }
    let raw: Vec<f64> = (0..a.steps)
        .map(|k| lo + (hi - lo) * k as f64 / (a.steps - 1) as f64)
        .collect();
    let grid = raw
        .iter()
        .map(|&v| {
            let ctx = match norm.kind {
                AuxKind::AngleHeight => SceneContext::new(
                    AuxKind::AngleHeight,
                    vec![v, a.fixed_height.unwrap_or(norm.center[1])],
                )?,
                kind => SceneContext::new(kind, vec![v])?,
            };
            Ok(norm.normalize(&ctx)?.into_iter().map(|z| z as f32).collect())
        })
        .collect::<acnn::Result<Vec<Vec<f32>>>>()?;
    let snapshots: Vec<Tensor<f32>> = layer.manifold_probe(&grid)?;
    let mut body = Vec::new();
    write_probe_csv(&mut body, &raw, &snapshots)?;
    let body = String::from_utf8(body).expect("csv output is utf-8");
    eprintln!(
        "probed adaptive layer {} at {} aux values in [{lo}, {hi}]",
        a.layer,
        a.steps
    );
    emit(Some(&a.report), cfg, &body)
}
