//! Subcommand implementations. Exit code 2 for input errors, 1 for
//! contract failures (demo assertion, divergent training), 0 on success.

use crate::args::*;
use crate::io::{read_json, write_json_atomic, write_text_atomic};
use crate::pipeline::{self, PipelineConfig};
use acciturn_core::calibration::{filter_videos, report_csv, CalibrationResult, PosePairSet};
use acciturn_core::colmap::{extract_video_poses, load_sparse_model, mean_adjacent_angle,
    rebase_to_first_frame, VideoPoses};
use acciturn_core::eval::{evaluate, evaluate_with_calibration, histogram_csv, pose_histogram,
    sweep_csv, EvalReport};
use acciturn_core::learning::LearnError;
use acciturn_core::rotations::{rotation_to_euler, EulerPose, Rotation};
use acciturn_core::synth::generate;
use acciturn_core::targets::{encode_pose, BinSpec, PoseTarget};
use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// An error paired with the process exit code it should produce.
pub struct CmdFailure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for CmdFailure {
    fn from(e: E) -> Self {
        let error: anyhow::Error = e.into();
        // Divergent training is a contract failure, not an input problem.
        let code = if error
            .chain()
            .any(|c| matches!(c.downcast_ref(), Some(LearnError::NonFiniteLoss { .. })))
        {
            1
        } else {
            2
        };
        CmdFailure { code, error }
    }
}

fn contract_failure(error: anyhow::Error) -> CmdFailure {
    CmdFailure { code: 1, error }
}

pub fn run(cli: Cli) -> Result<(), CmdFailure> {
    match cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Synth(args) => synth(args),
        Command::Calibrate(args) => calibrate(args),
        Command::Filter(args) => filter(args),
        Command::Encode(args) => encode(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep(args),
        Command::Hist(args) => hist(args),
        Command::DemoTrain(args) => demo_train(args),
    }
}

fn ingest(args: IngestArgs) -> Result<(), CmdFailure> {
    let model = load_sparse_model(&args.model_dir)
        .with_context(|| format!("loading sparse model from {}", args.model_dir.display()))?;
    let mut poses = extract_video_poses(&model.images, &args.video_id)?;
    if args.rebase {
        poses = rebase_to_first_frame(&poses);
    }
    write_json_atomic(&args.out, &poses)?;
    println!(
        "{}: {} frames, mean adjacent rotation {:.3}°",
        poses.video_id,
        poses.frames.len(),
        mean_adjacent_angle(&poses).to_degrees()
    );
    Ok(())
}

fn synth(args: SynthCmdArgs) -> Result<(), CmdFailure> {
    let config = args.synth.to_config();
    let (samples, truth) = generate(&config)?;
    write_json_atomic(&args.out_dataset, &samples)?;
    write_json_atomic(&args.out_truth, &truth)?;
    println!(
        "generated {} samples across {} videos ({} flip-corrupted)",
        samples.len(),
        config.n_videos,
        truth.flipped_videos().len()
    );
    Ok(())
}

/// On-disk shape for `calibrate` input: one entry per video.
#[derive(Serialize, Deserialize)]
struct NamedPairSet {
    video_id: String,
    items: PosePairSet,
}

fn calibrate(args: CalibrateArgs) -> Result<(), CmdFailure> {
    let sets: Vec<NamedPairSet> = read_json(&args.pairs)?;
    if sets.is_empty() {
        return Err(anyhow!("no pair sets in {}", args.pairs.display()).into());
    }
    let mut results: BTreeMap<String, CalibrationResult> = BTreeMap::new();
    for set in &sets {
        if results.contains_key(&set.video_id) {
            return Err(anyhow!("duplicate video id '{}'", set.video_id).into());
        }
        let result = pipeline::calibrate_set(&set.items, args.side.into(), !args.no_refine);
        results.insert(set.video_id.clone(), result);
    }
    write_json_atomic(&args.out, &results)?;
    for (id, r) in &results {
        println!(
            "{id}: error {:.3}° side {} argmin {}",
            r.error.to_degrees(),
            r.side,
            r.argmin_id
        );
    }
    Ok(())
}

fn filter(args: FilterArgs) -> Result<(), CmdFailure> {
    if args.threshold_deg <= 0.0 {
        return Err(anyhow!("--threshold-deg must be positive").into());
    }
    let results: BTreeMap<String, CalibrationResult> = read_json(&args.calibrations)?;
    let threshold = args.threshold_deg.to_radians();
    let (kept, dropped) = filter_videos(&results, threshold);
    write_text_atomic(&args.out, &report_csv(&results, threshold))?;
    if let Some(path) = &args.kept_out {
        #[derive(Serialize)]
        struct Partition<'a> {
            kept: Vec<&'a String>,
            dropped: Vec<&'a String>,
        }
        write_json_atomic(
            path,
            &Partition {
                kept: kept.iter().collect(),
                dropped: dropped.iter().collect(),
            },
        )?;
    }
    println!(
        "kept {} videos, dropped {} at {:.1}°",
        kept.len(),
        dropped.len(),
        args.threshold_deg
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EncodedFrame {
    name: String,
    target: PoseTarget,
}

fn encode(args: EncodeArgs) -> Result<(), CmdFailure> {
    let spec = BinSpec::new(args.bin_size_deg.to_radians())
        .map_err(|e| anyhow!("--bin-size-deg {}: {e}", args.bin_size_deg))?;
    let poses: VideoPoses = read_json(&args.poses)?;
    let encoded: Vec<EncodedFrame> = poses
        .frames
        .iter()
        .map(|f| -> Result<EncodedFrame> {
            let euler = rotation_to_euler(&f.rotation);
            Ok(EncodedFrame {
                name: f.name.clone(),
                target: encode_pose(&euler, &spec).with_context(|| format!("frame {}", f.name))?,
            })
        })
        .collect::<Result<_>>()?;
    write_json_atomic(&args.out, &encoded)?;
    println!(
        "encoded {} frames with {:.1}° bins",
        encoded.len(),
        args.bin_size_deg
    );
    Ok(())
}

fn rotations_of(poses: &VideoPoses) -> Vec<Rotation> {
    poses.frames.iter().map(|f| f.rotation).collect()
}

fn eval(args: EvalArgs) -> Result<(), CmdFailure> {
    let pred: VideoPoses = read_json(&args.pred)?;
    let gt: VideoPoses = read_json(&args.gt)?;
    let report: EvalReport = if args.calibrate {
        evaluate_with_calibration(&rotations_of(&pred), &rotations_of(&gt), args.subset, args.seed)?
    } else {
        evaluate(&rotations_of(&pred), &rotations_of(&gt))?
    };
    write_json_atomic(&args.out, &report)?;
    println!(
        "acc {:.4}, median {:.3}°, n {}",
        report.acc,
        report.median_err.to_degrees(),
        report.n
    );
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), CmdFailure> {
    let config = args.train.to_pipeline_config(args.synth.to_config());
    let mut thresholds: Vec<f64> = args
        .thresholds_deg
        .iter()
        .map(|d| d.to_radians())
        .collect();
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rows = pipeline::run_sweep(&config, &thresholds)?;
    write_text_atomic(&args.out, &sweep_csv(&rows))?;
    for row in &rows {
        println!(
            "threshold {:.1}°: {} images{}",
            row.threshold.to_degrees(),
            row.n_images,
            match (row.acc, row.median) {
                (Some(a), Some(m)) => format!(", acc {:.4}, median {:.3}°", a, m.to_degrees()),
                _ => String::new(),
            }
        );
    }
    Ok(())
}

fn hist(args: HistArgs) -> Result<(), CmdFailure> {
    if args.bins == 0 {
        return Err(anyhow!("--bins must be at least 1").into());
    }
    let poses: VideoPoses = read_json(&args.poses)?;
    let eulers: Vec<EulerPose> = poses
        .frames
        .iter()
        .map(|f| rotation_to_euler(&f.rotation))
        .collect();
    let histogram = pose_histogram(&eulers, args.bins);
    write_text_atomic(&args.out, &histogram_csv(&histogram))?;
    println!("histogrammed {} poses into {} bins", eulers.len(), args.bins);
    Ok(())
}

fn demo_train(args: DemoArgs) -> Result<(), CmdFailure> {
    let config: PipelineConfig = args.train.to_pipeline_config(args.synth.to_config());
    let report = pipeline::run_demo(&config)?;
    write_json_atomic(&args.out, &report)?;

    println!(
        "stage 1: acc {:.4}, median {:.3}°  (held-out clean frames, n={})",
        report.stage1.acc, report.stage1.median_deg, report.stage1.n
    );
    println!(
        "stage 2: acc {:.4}, median {:.3}°",
        report.stage2.acc, report.stage2.median_deg
    );
    println!(
        "stage 2 without filtering: acc {:.4}, median {:.3}°",
        report.stage2_unfiltered.acc, report.stage2_unfiltered.median_deg
    );
    println!(
        "kept {}/{} videos at {:.1}°; clean max error {:.3}°, flipped min error {}",
        report.kept.len(),
        report.videos.len(),
        report.threshold_deg,
        report.separation.max_clean_error_deg,
        report
            .separation
            .min_flipped_error_deg
            .map(|e| format!("{e:.3}°"))
            .unwrap_or_else(|| "n/a".into())
    );
    if let Some(gap) = report.emergence_median_gap_deg {
        println!("emergent-frame median pairwise gap {gap:.3}°");
    }

    if !report.two_stage_improved() {
        return Err(contract_failure(anyhow!(
            "two-stage contract violated: stage-2 median {:.3}° is not below stage-1 median {:.3}°",
            report.stage2.median_deg,
            report.stage1.median_deg
        )));
    }
    Ok(())
}
