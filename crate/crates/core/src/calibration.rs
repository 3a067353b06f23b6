//! Per-video alignment of SfM pose annotations to a predictor's canonical
//! frame.
//!
//! A single global rotation per video relates the annotations `{R_i}` to
//! the predictions `{R̂_i}`. The aligner is searched from the per-frame
//! candidates `ΔR_j = R̂_j R_jᵀ` (or `R_jᵀ R̂_j` when the gauge acts on the
//! right) and optionally refined by an orthogonal-Procrustes projection.
//! The residual mean geodesic distance — the calibration error — doubles as
//! a label-noise heuristic used to drop unreliable videos.

use crate::colmap::VideoPoses;
use crate::rotations::{geodesic_distance, Rotation};
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("pose pair set must contain at least one item")]
    EmptySet,
    #[error("duplicate pair id '{0}'")]
    DuplicateId(String),
    #[error("mass matrix is numerically rank-deficient; Procrustes projection is ambiguous")]
    SingularMass,
}

/// Which side of the annotation the aligner multiplies on.
///
/// The per-video gauge of a world-to-camera pose convention acts on the
/// right; a predictor-frame change acts on the left. Both are supported and
/// [`auto_calibrate`] picks empirically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Left => "left",
            Side::Right => "right",
        })
    }
}

/// One annotated/predicted rotation pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosePair {
    pub id: String,
    pub annotated: Rotation,
    pub predicted: Rotation,
}

/// A non-empty set of pose pairs with unique ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<PosePair>", into = "Vec<PosePair>")]
pub struct PosePairSet {
    items: Vec<PosePair>,
}

impl PosePairSet {
    pub fn new(items: Vec<PosePair>) -> Result<Self, CalibrationError> {
        if items.is_empty() {
            return Err(CalibrationError::EmptySet);
        }
        let mut seen = BTreeSet::new();
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(CalibrationError::DuplicateId(item.id.clone()));
            }
        }
        Ok(PosePairSet { items })
    }

    pub fn items(&self) -> &[PosePair] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    /// Always false: the constructor rejects empty sets.
    pub fn is_empty(&self) -> bool {
        false
    }
}

impl TryFrom<Vec<PosePair>> for PosePairSet {
    type Error = CalibrationError;

    fn try_from(items: Vec<PosePair>) -> Result<Self, Self::Error> {
        PosePairSet::new(items)
    }
}

impl From<PosePairSet> for Vec<PosePair> {
    fn from(set: PosePairSet) -> Self {
        set.items
    }
}

/// An aligner with its residual error and provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// The optimal aligner.
    pub delta: Rotation,
    /// Mean geodesic residual, radians, in [0, π].
    pub error: f64,
    pub side: Side,
    /// Id of the frame whose candidate won the search.
    pub argmin_id: String,
}

fn aligned(annotated: &Rotation, delta: &Rotation, side: Side) -> Rotation {
    match side {
        Side::Left => delta * annotated,
        Side::Right => annotated * delta,
    }
}

/// Mean geodesic distance between predictions and aligned annotations.
pub fn calibration_error(p: &PosePairSet, delta: &Rotation, side: Side) -> f64 {
    let total: f64 = p
        .items
        .iter()
        .map(|pair| geodesic_distance(&pair.predicted, &aligned(&pair.annotated, delta, side)))
        .sum();
    total / p.len() as f64
}

fn candidate(pair: &PosePair, side: Side) -> Rotation {
    match side {
        Side::Left => &pair.predicted * &pair.annotated.transpose(),
        Side::Right => &pair.annotated.transpose() * &pair.predicted,
    }
}

/// Searches the per-frame candidate aligners and returns the one with the
/// lowest calibration error (ties broken by lowest frame index). Costs
/// O(K²) geodesic evaluations.
pub fn search_calibrate(p: &PosePairSet, side: Side) -> CalibrationResult {
    let mut best: Option<CalibrationResult> = None;
    for pair in &p.items {
        let delta = candidate(pair, side);
        let error = calibration_error(p, &delta, side);
        if best.as_ref().is_none_or(|b| error < b.error) {
            best = Some(CalibrationResult {
                delta,
                error,
                side,
                argmin_id: pair.id.clone(),
            });
        }
    }
    best.expect("PosePairSet is non-empty")
}

/// Runs the candidate search on both sides and keeps the lower-error
/// result; ties go to the right side (the gauge side of the world-to-camera
/// convention).
pub fn auto_calibrate(p: &PosePairSet) -> CalibrationResult {
    let left = search_calibrate(p, Side::Left);
    let right = search_calibrate(p, Side::Right);
    if left.error < right.error {
        left
    } else {
        right
    }
}

/// Projects the chordal mass matrix onto SO(3) and keeps the refinement
/// only if it lowers the calibration error (the result never gets worse
/// than `init`).
///
/// The projection minimizes the chordal objective exactly; under the
/// geodesic objective it is verified, never trusted blindly.
pub fn procrustes_refine(
    p: &PosePairSet,
    init: &CalibrationResult,
) -> Result<CalibrationResult, CalibrationError> {
    let side = init.side;
    let mut mass = Matrix3::<f64>::zeros();
    for pair in &p.items {
        let (a, b) = (pair.annotated.matrix(), pair.predicted.matrix());
        mass += match side {
            Side::Left => b * a.transpose(),
            Side::Right => a.transpose() * b,
        };
    }
    mass /= p.len() as f64;

    let svd = mass.svd(true, true);
    let sv = svd.singular_values;
    if sv[1] < 1e-9 && sv[2] < 1e-9 {
        return Err(CalibrationError::SingularMass);
    }
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let det = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, 1.0, det.signum()));
    let delta = Rotation::from_matrix_unchecked(u * fix * v_t);

    let error = calibration_error(p, &delta, side);
    if error < init.error {
        Ok(CalibrationResult {
            delta,
            error,
            side,
            argmin_id: init.argmin_id.clone(),
        })
    } else {
        Ok(init.clone())
    }
}

/// Search-and-refine convenience: refinement falls back to the search
/// result when the mass matrix is rank-deficient.
pub fn refine_or_keep(p: &PosePairSet, init: CalibrationResult) -> CalibrationResult {
    procrustes_refine(p, &init).unwrap_or(init)
}

/// Applies an aligner to every frame of a video: `Δ·R_i` (left) or `R_i·Δ`
/// (right).
pub fn apply_calibration(v: &VideoPoses, r: &CalibrationResult) -> VideoPoses {
    VideoPoses {
        video_id: v.video_id.clone(),
        frames: v
            .frames
            .iter()
            .map(|f| crate::colmap::Frame {
                name: f.name.clone(),
                rotation: aligned(&f.rotation, &r.delta, r.side),
                translation: f.translation,
            })
            .collect(),
    }
}

/// Partitions videos into kept (`error ≤ threshold`) and dropped.
pub fn filter_videos(
    results: &BTreeMap<String, CalibrationResult>,
    threshold: f64,
) -> (BTreeSet<String>, BTreeSet<String>) {
    assert!(threshold > 0.0, "threshold must be positive");
    let mut kept = BTreeSet::new();
    let mut dropped = BTreeSet::new();
    for (id, result) in results {
        if result.error <= threshold {
            kept.insert(id.clone());
        } else {
            dropped.insert(id.clone());
        }
    }
    (kept, dropped)
}

/// Renders the per-video calibration report:
/// `video_id,error_deg,side,argmin_id,kept`.
pub fn report_csv(results: &BTreeMap<String, CalibrationResult>, threshold: f64) -> String {
    let (kept, _) = filter_videos(results, threshold);
    let mut out = String::from("video_id,error_deg,side,argmin_id,kept\n");
    for (id, r) in results {
        out.push_str(&format!(
            "{},{:.6},{},{},{}\n",
            id,
            r.error.to_degrees(),
            r.side,
            r.argmin_id,
            kept.contains(id)
        ));
    }
    out
}
