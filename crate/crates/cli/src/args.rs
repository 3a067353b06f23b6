//! Command-line surface. Angles are degrees here and radians internally;
//! conversion happens only at this boundary.

use crate::pipeline::{PipelineConfig, SideChoice};
use acciturn_core::learning::TrainConfig;
use acciturn_core::synth::SynthConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "acciturn",
    version,
    about = "Turntable-video pose annotation: SfM pose extraction, canonical-frame calibration, target encoding, and benchmark evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Extract per-frame poses from a COLMAP sparse model directory.
    Ingest(IngestArgs),
    /// Generate a synthetic turntable dataset with ground truth.
    Synth(SynthCmdArgs),
    /// Fit per-video aligners between annotations and predictions.
    Calibrate(CalibrateArgs),
    /// Partition videos by calibration error and emit the report CSV.
    Filter(FilterArgs),
    /// Encode poses as bin indices + within-bin offsets.
    Encode(EncodeArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Sweep the calibration-error threshold through the full stage-two
    /// train + evaluate loop.
    Sweep(SweepArgs),
    /// Histogram Euler angles of a pose file.
    Hist(HistArgs),
    /// Run the full two-stage pipeline on synthetic data.
    DemoTrain(DemoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SideArg {
    Auto,
    Left,
    Right,
}

impl From<SideArg> for SideChoice {
    fn from(s: SideArg) -> SideChoice {
        match s {
            SideArg::Auto => SideChoice::Auto,
            SideArg::Left => SideChoice::Left,
            SideArg::Right => SideChoice::Right,
        }
    }
}

#[derive(Args)]
pub struct IngestArgs {
    /// Directory holding cameras.bin|txt and images.bin|txt.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub video_id: String,
    /// Right-multiply every pose by the first frame's inverse.
    #[arg(long)]
    pub rebase: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SynthFlags {
    #[arg(long, default_value_t = SynthConfig::default().n_videos)]
    pub videos: usize,
    #[arg(long, default_value_t = SynthConfig::default().frames_per_video)]
    pub frames: usize,
    #[arg(long, default_value_t = SynthConfig::default().azimuth_sweep.to_degrees())]
    pub azimuth_sweep_deg: f64,
    #[arg(long, default_value_t = SynthConfig::default().elevation_base.to_degrees())]
    pub elevation_base_deg: f64,
    #[arg(long, default_value_t = SynthConfig::default().elevation_jitter.to_degrees())]
    pub elevation_jitter_deg: f64,
    #[arg(long, default_value_t = SynthConfig::default().roll_jitter.to_degrees())]
    pub roll_jitter_deg: f64,
    #[arg(long, default_value_t = SynthConfig::default().sfm_noise.to_degrees())]
    pub sfm_noise_deg: f64,
    #[arg(long, default_value_t = SynthConfig::default().feature_noise)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = SynthConfig::default().flip_fraction)]
    pub flip_fraction: f64,
    #[arg(long, default_value_t = SynthConfig::default().feature_dim)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Test hook: skip the per-video random gauge.
    #[arg(long)]
    pub identity_gauges: bool,
}

impl SynthFlags {
    pub fn to_config(&self) -> SynthConfig {
        SynthConfig {
            n_videos: self.videos,
            frames_per_video: self.frames,
            azimuth_sweep: self.azimuth_sweep_deg.to_radians(),
            elevation_base: self.elevation_base_deg.to_radians(),
            elevation_jitter: self.elevation_jitter_deg.to_radians(),
            roll_jitter: self.roll_jitter_deg.to_radians(),
            sfm_noise: self.sfm_noise_deg.to_radians(),
            feature_noise: self.feature_noise,
            flip_fraction: self.flip_fraction,
            feature_dim: self.feature_dim,
            seed: self.seed,
            force_identity_gauges: self.identity_gauges,
        }
    }
}

#[derive(Args)]
pub struct SynthCmdArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    #[arg(long)]
    pub out_dataset: PathBuf,
    #[arg(long)]
    pub out_truth: PathBuf,
}

#[derive(Args)]
pub struct CalibrateArgs {
    /// JSON list of {video_id, items: [{id, annotated, predicted}]}.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, value_enum, default_value_t = SideArg::Auto)]
    pub side: SideArg,
    /// Skip the Procrustes refinement step.
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FilterArgs {
    /// Calibration map JSON produced by `calibrate`.
    #[arg(long)]
    pub calibrations: PathBuf,
    #[arg(long, default_value_t = 7.0)]
    pub threshold_deg: f64,
    /// Report CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional kept/dropped partition JSON.
    #[arg(long)]
    pub kept_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct EncodeArgs {
    /// VideoPoses JSON.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 15.0)]
    pub bin_size_deg: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predictions as VideoPoses JSON (frames matched to --gt by order).
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Align predictions to the ground truth on a random subset first.
    #[arg(long)]
    pub calibrate: bool,
    /// Calibration subset size (with --calibrate).
    #[arg(long, default_value_t = 100)]
    pub subset: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainFlags {
    #[arg(long, default_value_t = PipelineConfig::default().stage1.lr)]
    pub stage1_lr: f64,
    #[arg(long, default_value_t = PipelineConfig::default().stage1.epochs)]
    pub stage1_epochs: usize,
    #[arg(long, default_value_t = PipelineConfig::default().stage2.lr)]
    pub stage2_lr: f64,
    #[arg(long, default_value_t = PipelineConfig::default().stage2.epochs)]
    pub stage2_epochs: usize,
    #[arg(long, default_value_t = PipelineConfig::default().stage1.batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = PipelineConfig::default().holdout_every)]
    pub holdout_every: usize,
    #[arg(long, default_value_t = PipelineConfig::default().lambda)]
    pub lambda: f64,
    #[arg(long, default_value_t = 7.0)]
    pub threshold_deg: f64,
    #[arg(long, value_enum, default_value_t = SideArg::Auto)]
    pub side: SideArg,
    /// Skip the Procrustes refinement step.
    #[arg(long)]
    pub no_refine: bool,
}

impl TrainFlags {
    pub fn to_pipeline_config(&self, synth: SynthConfig) -> PipelineConfig {
        let defaults = PipelineConfig::default();
        PipelineConfig {
            synth,
            threshold: self.threshold_deg.to_radians(),
            side: self.side.into(),
            refine: !self.no_refine,
            holdout_every: self.holdout_every,
            stage1: TrainConfig {
                lr: self.stage1_lr,
                epochs: self.stage1_epochs,
                batch_size: self.batch_size,
                seed: synth.seed,
                ..defaults.stage1
            },
            stage2: TrainConfig {
                lr: self.stage2_lr,
                epochs: self.stage2_epochs,
                batch_size: self.batch_size,
                seed: synth.seed,
                ..defaults.stage2
            },
            lambda: self.lambda,
        }
    }
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comma-separated thresholds in degrees.
    #[arg(long, value_delimiter = ',', required = true)]
    pub thresholds_deg: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct HistArgs {
    /// VideoPoses JSON.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long, default_value_t = 24)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub out: PathBuf,
}
