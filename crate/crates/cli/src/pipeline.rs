//! The end-to-end two-stage pipeline on synthetic turntable data.
//!
//! Stage one trains a relative-pose predictor across all videos; its
//! emergent canonical frame calibrates each video's annotations. Videos
//! whose calibration error exceeds the threshold are dropped (they carry
//! corrupted appearances), and stage two trains an absolute bin/offset
//! predictor on the calibrated survivors. Both stages are scored against
//! the synthetic ground truth on held-out frames of clean videos.

use acciturn_core::calibration::{
    auto_calibrate, filter_videos, refine_or_keep, search_calibrate, CalibrationResult, PosePair,
    PosePairSet, Side,
};
use acciturn_core::eval::{threshold_sweep, SweepRow, SweepVideo};
use acciturn_core::learning::{
    predict_rotations, train, Objective, Sample, ToyPredictor, TrainConfig, TrainOutput,
};
use acciturn_core::rotations::{geodesic_distance, Rotation};
use acciturn_core::synth::{generate, oracle_eval, SynthConfig, SynthTruth};
use acciturn_core::targets::BinSpec;
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Aligner-side policy for calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideChoice {
    Auto,
    Left,
    Right,
}

/// Runs the configured calibration (search on one or both sides, optional
/// Procrustes refinement with fallback).
pub fn calibrate_set(p: &PosePairSet, side: SideChoice, refine: bool) -> CalibrationResult {
    let searched = match side {
        SideChoice::Auto => auto_calibrate(p),
        SideChoice::Left => search_calibrate(p, Side::Left),
        SideChoice::Right => search_calibrate(p, Side::Right),
    };
    if refine {
        refine_or_keep(p, searched)
    } else {
        searched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    /// Calibration-error filter threshold, radians.
    pub threshold: f64,
    pub side: SideChoice,
    pub refine: bool,
    /// Every n-th frame of each video is held out from both stages.
    pub holdout_every: usize,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub lambda: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            synth: SynthConfig::default(),
            threshold: 7f64.to_radians(),
            side: SideChoice::Auto,
            refine: true,
            holdout_every: 5,
            stage1: TrainConfig {
                lr: 0.3,
                epochs: 300,
                batch_size: 64,
                seed: 0,
                lr_decay: true,
                pair_cap_factor: 4,
            },
            stage2: TrainConfig {
                lr: 0.7,
                epochs: 3000,
                batch_size: 64,
                seed: 0,
                lr_decay: true,
                pair_cap_factor: 4,
            },
            lambda: 1.0,
        }
    }
}

/// Everything threshold-independent: the dataset, stage-one training, and
/// per-video calibrations.
pub struct Prepared {
    pub config: PipelineConfig,
    pub samples: Vec<Sample>,
    pub truth: SynthTruth,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    pub stage1: TrainOutput,
    /// Stage-one predictions for every sample.
    pub stage1_predictions: Vec<Rotation>,
    /// Per-video aligners fitted on training frames only.
    pub calibrations: BTreeMap<String, CalibrationResult>,
    /// Per clean video: the frame the predictor put it in, recovered by
    /// calibrating its predictions against the canonical truth.
    pub emergent_frames: BTreeMap<String, Rotation>,
}

impl Prepared {
    /// Indices of held-out frames belonging to clean (never-flipped)
    /// videos, in dataset order.
    pub fn holdout_clean_indices(&self) -> Vec<usize> {
        let flipped_videos = self.truth.flipped_videos();
        self.holdout_indices
            .iter()
            .copied()
            .filter(|&i| !flipped_videos.contains(&self.samples[i].video_id))
            .collect()
    }

    fn train_frame_count(&self, video: &str) -> usize {
        self.train_indices
            .iter()
            .filter(|&&i| self.samples[i].video_id == video)
            .count()
    }
}

/// Splits sample indices into train and holdout (every `holdout_every`-th
/// frame of each video, counted per video).
fn split_holdout(samples: &[Sample], holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    let mut position: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        let pos = position.entry(s.video_id.as_str()).or_insert(0);
        if (*pos + 1).is_multiple_of(holdout_every) {
            holdout.push(i);
        } else {
            train.push(i);
        }
        *pos += 1;
    }
    (train, holdout)
}

/// Runs synth → stage-one training → per-video calibration.
pub fn prepare(config: &PipelineConfig) -> Result<Prepared> {
    if config.holdout_every < 2 {
        bail!("holdout_every must be at least 2");
    }
    let (samples, truth) = generate(&config.synth).context("generating synthetic dataset")?;
    let (train_indices, holdout_indices) = split_holdout(&samples, config.holdout_every);

    let train_samples: Vec<Sample> = train_indices.iter().map(|&i| samples[i].clone()).collect();
    let predictor = ToyPredictor::relative(config.synth.feature_dim, config.stage1.seed);
    let stage1 = train(predictor, &train_samples, Objective::Relative, &config.stage1)
        .context("stage-one training")?;
    let stage1_predictions =
        predict_rotations(&stage1.predictor, &samples).context("stage-one prediction")?;

    // Per-video calibration on training frames.
    let mut calibrations = BTreeMap::new();
    let mut by_video: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &train_indices {
        by_video.entry(samples[i].video_id.as_str()).or_default().push(i);
    }
    for (video, indices) in &by_video {
        let items: Vec<PosePair> = indices
            .iter()
            .map(|&i| PosePair {
                id: samples[i].frame_id.clone(),
                annotated: samples[i].rotation,
                predicted: stage1_predictions[i],
            })
            .collect();
        let set = PosePairSet::new(items)?;
        calibrations.insert(video.to_string(), calibrate_set(&set, config.side, config.refine));
    }

    // Emergent frame per clean video: align predictions to the canonical
    // truth. With one shared canonical frame these agree across videos.
    let flipped_videos = truth.flipped_videos();
    let mut emergent_frames = BTreeMap::new();
    for (video, indices) in &by_video {
        if flipped_videos.contains(*video) {
            continue;
        }
        let items: Vec<PosePair> = indices
            .iter()
            .map(|&i| PosePair {
                id: samples[i].frame_id.clone(),
                annotated: truth.canonical[&samples[i].frame_id],
                predicted: stage1_predictions[i],
            })
            .collect();
        let set = PosePairSet::new(items)?;
        emergent_frames.insert(
            video.to_string(),
            calibrate_set(&set, SideChoice::Auto, config.refine).delta,
        );
    }

    Ok(Prepared {
        config: *config,
        samples,
        truth,
        train_indices,
        holdout_indices,
        stage1,
        stage1_predictions,
        calibrations,
        emergent_frames,
    })
}

/// Median pairwise geodesic gap between the clean videos' emergent frames.
pub fn emergence_median_gap(prepared: &Prepared) -> Option<f64> {
    let deltas: Vec<&Rotation> = prepared.emergent_frames.values().collect();
    let mut gaps = Vec::new();
    for (i, a) in deltas.iter().enumerate() {
        for b in &deltas[i + 1..] {
            gaps.push(geodesic_distance(a, b));
        }
    }
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = gaps.len();
    Some(if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    })
}

/// Stage-two training set: calibrated annotations of the kept videos'
/// training frames.
fn stage2_training_set(prepared: &Prepared, kept: &BTreeSet<String>) -> Vec<Sample> {
    prepared
        .train_indices
        .iter()
        .filter_map(|&i| {
            let s = &prepared.samples[i];
            let calib = prepared.calibrations.get(&s.video_id)?;
            if !kept.contains(&s.video_id) {
                return None;
            }
            let rotation = match calib.side {
                Side::Left => &calib.delta * &s.rotation,
                Side::Right => &s.rotation * &calib.delta,
            };
            Some(Sample {
                rotation,
                ..s.clone()
            })
        })
        .collect()
}

/// Trains stage two on the kept videos and scores it on the held-out clean
/// frames. Returns the trained output and the evaluation report.
pub fn stage2_run(
    prepared: &Prepared,
    kept: &BTreeSet<String>,
) -> Result<(TrainOutput, acciturn_core::eval::EvalReport)> {
    let config = &prepared.config;
    let training = stage2_training_set(prepared, kept);
    if training.is_empty() {
        bail!("no videos pass the calibration threshold; nothing to train on");
    }
    let predictor = ToyPredictor::absolute(
        config.synth.feature_dim,
        BinSpec::default(),
        config.stage2.seed,
    );
    let stage2 = train(
        predictor,
        &training,
        Objective::Absolute {
            lambda: config.lambda,
        },
        &config.stage2,
    )
    .context("stage-two training")?;

    let eval_indices = prepared.holdout_clean_indices();
    let eval_samples: Vec<Sample> = eval_indices
        .iter()
        .map(|&i| prepared.samples[i].clone())
        .collect();
    let predictions = predict_rotations(&stage2.predictor, &eval_samples)?;
    let frame_ids: BTreeSet<String> = eval_samples.iter().map(|s| s.frame_id.clone()).collect();
    let truth = prepared.truth.restrict(&frame_ids);
    let report = oracle_eval(&predictions, &truth).context("stage-two oracle evaluation")?;
    Ok((stage2, report))
}

/// Stage-one report on the same held-out clean frames.
pub fn stage1_eval(prepared: &Prepared) -> Result<acciturn_core::eval::EvalReport> {
    let eval_indices = prepared.holdout_clean_indices();
    let predictions: Vec<Rotation> = eval_indices
        .iter()
        .map(|&i| prepared.stage1_predictions[i])
        .collect();
    let frame_ids: BTreeSet<String> = eval_indices
        .iter()
        .map(|&i| prepared.samples[i].frame_id.clone())
        .collect();
    let truth = prepared.truth.restrict(&frame_ids);
    Ok(oracle_eval(&predictions, &truth)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageSummary {
    pub acc: f64,
    pub median_deg: f64,
    pub n: usize,
}

impl StageSummary {
    fn from_report(report: &acciturn_core::eval::EvalReport) -> Self {
        StageSummary {
            acc: report.acc,
            median_deg: report.median_err.to_degrees(),
            n: report.n,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub error_deg: f64,
    pub side: Side,
    pub argmin_id: String,
    pub kept: bool,
    pub flipped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Separation {
    pub max_clean_error_deg: f64,
    pub min_flipped_error_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: PipelineConfig,
    pub threshold_deg: f64,
    pub stage1: StageSummary,
    pub stage2: StageSummary,
    /// Ablation: stage two retrained with the calibration-error filter
    /// disabled, so corrupted videos contaminate its training labels.
    pub stage2_unfiltered: StageSummary,
    pub videos: BTreeMap<String, VideoOutcome>,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub emergence_median_gap_deg: Option<f64>,
    pub separation: Separation,
    pub stage1_checkpoint_losses: Vec<f64>,
    pub stage2_checkpoint_losses: Vec<f64>,
}

impl DemoReport {
    /// The demo's contract: stage two strictly improves the median error.
    pub fn two_stage_improved(&self) -> bool {
        self.stage2.median_deg < self.stage1.median_deg
    }
}

/// Runs the full two-stage pipeline and assembles the report.
pub fn run_demo(config: &PipelineConfig) -> Result<DemoReport> {
    let prepared = prepare(config)?;
    let (kept, dropped) = filter_videos(&prepared.calibrations, config.threshold);
    let stage1_report = stage1_eval(&prepared)?;
    let (stage2_out, stage2_report) = stage2_run(&prepared, &kept)?;
    let everything: BTreeSet<String> = prepared.calibrations.keys().cloned().collect();
    let (_, unfiltered_report) = stage2_run(&prepared, &everything)?;

    let flipped_videos = prepared.truth.flipped_videos();
    let videos: BTreeMap<String, VideoOutcome> = prepared
        .calibrations
        .iter()
        .map(|(id, c)| {
            (
                id.clone(),
                VideoOutcome {
                    error_deg: c.error.to_degrees(),
                    side: c.side,
                    argmin_id: c.argmin_id.clone(),
                    kept: kept.contains(id),
                    flipped: flipped_videos.contains(id),
                },
            )
        })
        .collect();

    let max_clean_error_deg = videos
        .values()
        .filter(|v| !v.flipped)
        .map(|v| v.error_deg)
        .fold(0.0f64, f64::max);
    let min_flipped_error_deg = videos
        .values()
        .filter(|v| v.flipped)
        .map(|v| v.error_deg)
        .fold(None, |acc: Option<f64>, e| {
            Some(acc.map_or(e, |a| a.min(e)))
        });

    Ok(DemoReport {
        config: *config,
        threshold_deg: config.threshold.to_degrees(),
        stage1: StageSummary::from_report(&stage1_report),
        stage2: StageSummary::from_report(&stage2_report),
        stage2_unfiltered: StageSummary::from_report(&unfiltered_report),
        videos,
        kept: kept.into_iter().collect(),
        dropped: dropped.into_iter().collect(),
        emergence_median_gap_deg: emergence_median_gap(&prepared).map(f64::to_degrees),
        separation: Separation {
            max_clean_error_deg,
            min_flipped_error_deg,
        },
        stage1_checkpoint_losses: prepared.stage1.checkpoint_losses.clone(),
        stage2_checkpoint_losses: stage2_out.checkpoint_losses,
    })
}

/// Threshold sweep: stage one and calibration run once, stage two is
/// retrained per threshold on whichever videos pass.
pub fn run_sweep(config: &PipelineConfig, thresholds: &[f64]) -> Result<Vec<SweepRow>> {
    if thresholds.is_empty() {
        bail!("need at least one threshold");
    }
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        bail!("thresholds must be sorted ascending");
    }
    let prepared = prepare(config)?;
    let videos: BTreeMap<String, SweepVideo<()>> = prepared
        .calibrations
        .iter()
        .map(|(id, c)| {
            (
                id.clone(),
                SweepVideo {
                    calibration: c.clone(),
                    n_frames: prepared.train_frame_count(id),
                    data: (),
                },
            )
        })
        .collect();
    let rows = threshold_sweep(&videos, thresholds, |kept| {
        let kept_ids: BTreeSet<String> = kept.keys().map(|k| k.to_string()).collect();
        match stage2_run(&prepared, &kept_ids) {
            Ok((_, report)) => Some((report.acc, report.median_err)),
            Err(_) => None,
        }
    });
    Ok(rows)
}
