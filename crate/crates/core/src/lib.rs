//! Turntable-video pose annotation toolkit.
//!
//! Converts structure-from-motion camera poses from object-turning videos
//! into calibrated, canonical-frame 3D pose annotations:
//!
//! - [`rotations`]: SO(3) algebra — matrices, quaternions, 6D representation,
//!   Euler conventions, metrics, random sampling.
//! - [`colmap`]: parsers for COLMAP sparse-model outputs (binary and text)
//!   and per-video pose extraction.
//! - [`calibration`]: per-video alignment of SfM annotations to a predictor's
//!   emergent canonical frame, plus noise filtering.
//! - [`targets`]: bin-index + within-bin-offset encoding of Euler poses.
//! - [`learning`]: relative and absolute pose objectives, a linear toy
//!   predictor, and deterministic gradient-descent training.
//! - [`synth`]: synthetic turntable generator with ground-truth bookkeeping.
//! - [`eval`]: benchmark metrics (median geodesic error, Acc@π/6),
//!   evaluation-time calibration, threshold sweeps, pose histograms.

pub mod calibration;
pub mod colmap;
pub mod eval;
pub mod learning;
pub mod rotations;
pub mod synth;
pub mod targets;

pub use rotations::{EulerPose, Rotation};
