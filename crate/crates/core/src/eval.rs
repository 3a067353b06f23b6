//! Benchmark metrics and evaluation tooling.
//!
//! Median geodesic error and Acc@π/6 (strict inequality), optional
//! evaluation-time calibration on a seeded random subset, calibration-error
//! threshold sweeps, and per-angle pose histograms.

use crate::calibration::{
    auto_calibrate, refine_or_keep, CalibrationResult, PosePair, PosePairSet, Side,
};
use crate::rotations::{geodesic_distance, EulerPose, Rotation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction list has length {got}, ground truth {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("cannot evaluate an empty set")]
    Empty,
}

/// Accuracy threshold: a prediction counts as correct when its geodesic
/// error is strictly below π/6.
pub const ACC_THRESHOLD: f64 = PI / 6.0;

/// Evaluation summary: accuracy, exact median error, per-item errors, and
/// the calibration applied (when any).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fraction of items with error < π/6.
    pub acc: f64,
    /// Median geodesic error, radians (mean of the two middles for even n).
    pub median_err: f64,
    pub n: usize,
    pub per_item_err: Vec<f64>,
    pub calibration_used: Option<CalibrationResult>,
}

/// Exact middle order statistic; mean of the two middles for even length.
fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Builds a report from per-item errors.
pub fn report_from_errors(
    per_item_err: Vec<f64>,
    calibration_used: Option<CalibrationResult>,
) -> Result<EvalReport, EvalError> {
    if per_item_err.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = per_item_err.len();
    let hits = per_item_err.iter().filter(|&&e| e < ACC_THRESHOLD).count();
    Ok(EvalReport {
        acc: hits as f64 / n as f64,
        median_err: median(&per_item_err),
        n,
        per_item_err,
        calibration_used,
    })
}

/// Per-item geodesic errors between predictions and ground truth.
pub fn evaluate(pred: &[Rotation], gt: &[Rotation]) -> Result<EvalReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            got: pred.len(),
            expected: gt.len(),
        });
    }
    let errors: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| geodesic_distance(g, p))
        .collect();
    report_from_errors(errors, None)
}

/// Evaluates after aligning predictions to the ground truth with a single
/// global rotation estimated on a seeded random subset of the pairs.
///
/// The aligner solves `Δ∘R_pred ≈ R_gt` (auto side) on `subset_size` pairs
/// drawn without replacement, is applied to all predictions, and the full
/// set — subset included — is evaluated. `subset_size` is clamped to n.
pub fn evaluate_with_calibration(
    pred: &[Rotation],
    gt: &[Rotation],
    subset_size: usize,
    seed: u64,
) -> Result<EvalReport, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            got: pred.len(),
            expected: gt.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = pred.len();
    let take = subset_size.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, n, take);

    let items: Vec<PosePair> = chosen
        .iter()
        .map(|i| PosePair {
            id: format!("i{i:06}"),
            annotated: pred[i],
            predicted: gt[i],
        })
        .collect();
    let set = PosePairSet::new(items).expect("subset is non-empty with unique ids");
    let calib = refine_or_keep(&set, auto_calibrate(&set));

    let errors: Vec<f64> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            let aligned = match calib.side {
                Side::Left => &calib.delta * p,
                Side::Right => p * &calib.delta,
            };
            geodesic_distance(g, &aligned)
        })
        .collect();
    report_from_errors(errors, Some(calib))
}

/// Per-video payload for a threshold sweep.
#[derive(Debug, Clone)]
pub struct SweepVideo<V> {
    pub calibration: CalibrationResult,
    pub n_frames: usize,
    pub data: V,
}

/// One sweep row; `acc`/`median` are absent when no video passes the
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Threshold, radians.
    pub threshold: f64,
    pub n_images: usize,
    pub acc: Option<f64>,
    pub median: Option<f64>,
}

/// Runs `eval_fn` on the videos passing each calibration-error threshold.
/// `thresholds` must be sorted ascending; `n_images` (the kept training
/// frames) is then non-decreasing across rows.
pub fn threshold_sweep<V, F>(
    videos: &BTreeMap<String, SweepVideo<V>>,
    thresholds: &[f64],
    mut eval_fn: F,
) -> Vec<SweepRow>
where
    F: FnMut(&BTreeMap<&str, &V>) -> Option<(f64, f64)>,
{
    debug_assert!(
        thresholds.windows(2).all(|w| w[0] <= w[1]),
        "thresholds must be sorted ascending"
    );
    thresholds
        .iter()
        .map(|&threshold| {
            let kept: BTreeMap<&str, &V> = videos
                .iter()
                .filter(|(_, v)| v.calibration.error <= threshold)
                .map(|(id, v)| (id.as_str(), &v.data))
                .collect();
            let n_images = videos
                .values()
                .filter(|v| v.calibration.error <= threshold)
                .map(|v| v.n_frames)
                .sum();
            let (acc, median) = if n_images == 0 {
                (None, None)
            } else {
                match eval_fn(&kept) {
                    Some((a, m)) => (Some(a), Some(m)),
                    None => (None, None),
                }
            };
            SweepRow {
                threshold,
                n_images,
                acc,
                median,
            }
        })
        .collect()
}

/// Renders sweep rows as `threshold_deg,n_images,acc,median_deg` CSV.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("threshold_deg,n_images,acc,median_deg\n");
    for row in rows {
        let acc = row.acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        let med = row
            .median
            .map(|m| format!("{:.6}", m.to_degrees()))
            .unwrap_or_default();
        out.push_str(&format!(
            "{:.6},{},{},{}\n",
            row.threshold.to_degrees(),
            row.n_images,
            acc,
            med
        ));
    }
    out
}

/// Per-angle histogram over the declared angle ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: usize,
    /// Counts ordered [azimuth, elevation, roll].
    pub counts: [Vec<usize>; 3],
}

/// Histograms each Euler angle into `bins` uniform bins over its range
/// (azimuth and roll over `[−π, π)`, elevation over `[−π/2, π/2]`). Counts
/// sum to the number of poses for every angle.
///
/// Panics if `bins` is zero.
pub fn pose_histogram(poses: &[EulerPose], bins: usize) -> Histogram {
    assert!(bins >= 1, "need at least one bin");
    let ranges = [(-PI, 2.0 * PI), (-PI / 2.0, PI), (-PI, 2.0 * PI)];
    let mut counts: [Vec<usize>; 3] = [vec![0; bins], vec![0; bins], vec![0; bins]];
    for p in poses {
        let values = [p.azimuth, p.elevation, p.roll];
        for (a, &(min, len)) in ranges.iter().enumerate() {
            let idx = (((values[a] - min) / len * bins as f64).floor() as isize)
                .clamp(0, bins as isize - 1) as usize;
            counts[a][idx] += 1;
        }
    }
    Histogram { bins, counts }
}

/// Renders a histogram as `angle,bin_index,bin_start_deg,bin_end_deg,count`
/// CSV rows (one block of rows per angle).
pub fn histogram_csv(h: &Histogram) -> String {
    let ranges = [(-PI, 2.0 * PI), (-PI / 2.0, PI), (-PI, 2.0 * PI)];
    let names = crate::targets::ANGLE_NAMES;
    let mut out = String::from("angle,bin_index,bin_start_deg,bin_end_deg,count\n");
    for a in 0..3 {
        let (min, len) = ranges[a];
        let width = len / h.bins as f64;
        for (idx, count) in h.counts[a].iter().enumerate() {
            let lo = min + idx as f64 * width;
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                names[a],
                idx,
                lo.to_degrees(),
                (lo + width).to_degrees(),
                count
            ));
        }
    }
    out
}
