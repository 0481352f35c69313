//! Command-line flags of every subcommand.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "acnn",
    version,
    about = "Adaptive convolutional networks for crowd counting and deblurring",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic multi-viewpoint crowd dataset (train/val/test).
    GenSynth(GenSynth),
    /// Write a procedural image corpus plus corrupted test copies.
    GenDeconvData(GenDeconvData),
    /// Train a crowd-counting model.
    TrainCount(TrainCount),
    /// Evaluate a counting checkpoint on a dataset.
    EvalCount(EvalCount),
    /// Train a deconvolution model.
    TrainDeconv(TrainDeconv),
    /// Evaluate a deconvolution checkpoint per blur radius.
    EvalDeconv(EvalDeconv),
    /// Print the per-layer parameter table of a model spec.
    Params(Params),
    /// Compute the perspective map of a camera.
    Perspective(Perspective),
    /// Run finite-difference gradient suites.
    Gradcheck(Gradcheck),
    /// Sweep the generated filters of an adaptive layer over its side information.
    ManifoldProbe(ManifoldProbe),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenSynth {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub contexts: usize,
    #[arg(long, default_value_t = 8)]
    pub train_per_context: usize,
    #[arg(long, default_value_t = 1)]
    pub val_per_context: usize,
    #[arg(long, default_value_t = 2)]
    pub test_per_context: usize,
    #[arg(long, default_value_t = 10)]
    pub people_min: usize,
    #[arg(long, default_value_t = 60)]
    pub people_max: usize,
    #[arg(long, default_value_t = 96)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 16.0)]
    pub fov: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GenDeconvData {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Training images.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub n_val: usize,
    #[arg(long, default_value_t = 80)]
    pub n_test: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Radii of the corrupted test copies.
    #[arg(long, value_delimiter = ',', default_value = "3,7,11")]
    pub radii: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainCount {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub spec: String,
    /// Dataset directory (uses `train/` and `val/` inside it when present).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the count-class loss.
    #[arg(long, default_value_t = 0.1)]
    pub lambda: f64,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 100.0)]
    pub target_scale: f64,
    /// Grid spacing of training patches.
    #[arg(long, default_value_t = 6)]
    pub sample_stride: usize,
    /// Patches kept per scene (0 keeps all).
    #[arg(long, default_value_t = 48)]
    pub max_patches: usize,
    /// Prediction stride for validation counts.
    #[arg(long, default_value_t = 8)]
    pub eval_stride: usize,
    /// Per-epoch CSV log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalCount {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset directory (uses `test/` inside it when present).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub stride: usize,
    /// Split each ROI into this many horizontal bars and report per-bar counts.
    #[arg(long, default_value_t = 0)]
    pub bars: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainDeconv {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long, default_value = "deconv-acnn")]
    pub spec: String,
    /// Corpus directory; a procedural corpus is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,7,11")]
    pub radii: Vec<usize>,
    #[arg(long, default_value_t = 121)]
    pub filter_length: usize,
    /// Filters per layer of the plain model.
    #[arg(long, default_value_t = 38)]
    pub channels: usize,
    #[arg(long, default_value_t = 90)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Square training crop (0 trains on whole images).
    #[arg(long, default_value_t = 0)]
    pub crop: usize,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 25)]
    pub patience: usize,
    /// Procedural corpus sizes (train, val) when no data directory is given.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 40)]
    pub n_val: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalDeconv {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Corpus directory (test split); a procedural test set is generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11")]
    pub radii: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub sigma: f64,
    #[arg(long, default_value_t = 80)]
    pub n_test: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Params {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub spec: String,
    #[arg(long, default_value_t = 121)]
    pub filter_length: usize,
    #[arg(long, default_value_t = 38)]
    pub channels: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Perspective {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f64")]
    pub precision: String,
    /// Camera tilt in degrees (negative looks down).
    #[arg(long, allow_hyphen_values = true)]
    pub angle: f64,
    /// Camera height in meters.
    #[arg(long)]
    pub height: f64,
    #[arg(long, default_value_t = 16.0)]
    pub fov: f64,
    #[arg(long, default_value_t = 96)]
    pub rows: usize,
    #[arg(long, default_value_t = 128)]
    pub cols: usize,
    /// 16-bit PGM of the map scaled so its maximum is white.
    #[arg(long)]
    pub pgm: Option<PathBuf>,
    /// Per-row CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f64")]
    pub precision: String,
    /// Run every suite.
    #[arg(long, conflicts_with = "suite")]
    pub all: bool,
    #[arg(long)]
    pub suite: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ManifoldProbe {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub ckpt: PathBuf,
    /// 1-based index among the model's adaptive layers.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    /// Raw side-information range swept (defaults to the training range).
    #[arg(long, allow_hyphen_values = true)]
    pub aux_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub aux_max: Option<f64>,
    #[arg(long, default_value_t = 21)]
    pub steps: usize,
    /// Camera height held fixed while sweeping the angle of angle+height models.
    #[arg(long)]
    pub fixed_height: Option<f64>,
    #[arg(long)]
    pub report: PathBuf,
}
