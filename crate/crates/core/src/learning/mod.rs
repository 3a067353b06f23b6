//! Training objectives and a linear toy predictor.
//!
//! Two objectives mirror the two-stage scheme: a relative-pose loss over
//! same-video frame pairs (stage one, 6D head recovered by Gram-Schmidt)
//! and an absolute bin-classification + offset-regression loss on
//! calibrated annotations (stage two). The predictor is a linear map on
//! feature vectors — the mechanism under study (a shared predictor forcing
//! a common frame across videos) is architecture-independent, and a linear
//! model keeps every contract checkable in seconds.
//!
//! Gradients are analytic; finite differences appear only in tests.

mod loss;
mod train;

pub use loss::{
    absolute_loss, absolute_loss_grad, relative_loss, relative_loss_grad, AbsoluteOutput,
    Gradients, PairMetric,
};
pub use train::{predict_rotations, train, Objective, TrainConfig, TrainOutput};

use crate::rotations::{Rotation, RotationError, SixD};
use crate::targets::{BinSpec, TargetError};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("pair index {index} out of range for {len} samples")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("pair ({i}, {j}) spans two videos")]
    CrossVideoPair { i: usize, j: usize },
    #[error("pair ({index}, {index}) repeats a frame")]
    SelfPair { index: usize },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("sample feature dimension {got} differs from {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("empty dataset or pair batch")]
    Empty,
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("operation requires a {expected}-stage predictor")]
    WrongStage { expected: &'static str },
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Target(#[from] TargetError),
}

/// One dataset entry: a feature vector standing in for an image, plus the
/// SfM pose annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub video_id: String,
    pub frame_id: String,
    pub features: Vec<f64>,
    pub rotation: Rotation,
}

/// The shared feature dimension of a dataset.
pub fn feature_dim(samples: &[Sample]) -> Result<usize, LearnError> {
    let first = samples.first().ok_or(LearnError::Empty)?;
    let d = first.features.len();
    for s in samples {
        if s.features.len() != d {
            return Err(LearnError::DimensionMismatch {
                got: s.features.len(),
                expected: d,
            });
        }
    }
    Ok(d)
}

/// Index pairs into a sample list, each pair within one video. Validated at
/// construction, so losses only re-check bounds.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pairs: Vec<(usize, usize)>,
}

impl PairBatch {
    pub fn new(pairs: Vec<(usize, usize)>, samples: &[Sample]) -> Result<Self, LearnError> {
        for &(i, j) in &pairs {
            for idx in [i, j] {
                if idx >= samples.len() {
                    return Err(LearnError::IndexOutOfRange {
                        index: idx,
                        len: samples.len(),
                    });
                }
            }
            if i == j {
                return Err(LearnError::SelfPair { index: i });
            }
            if samples[i].video_id != samples[j].video_id {
                return Err(LearnError::CrossVideoPair { i, j });
            }
        }
        Ok(PairBatch { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Default pair sampler: all adjacent same-video pairs plus uniformly
/// random same-video pairs, up to `cap_factor·K` pairs for a video of
/// length K.
pub fn sample_pairs(
    samples: &[Sample],
    cap_factor: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PairBatch, LearnError> {
    let mut videos: Vec<(&str, Vec<usize>)> = Vec::new();
    for (idx, s) in samples.iter().enumerate() {
        match videos.last_mut() {
            Some((vid, indices)) if *vid == s.video_id => indices.push(idx),
            _ => videos.push((&s.video_id, vec![idx])),
        }
    }
    let mut pairs = Vec::new();
    for (_, indices) in &videos {
        let k = indices.len();
        if k < 2 {
            continue;
        }
        for w in indices.windows(2) {
            pairs.push((w[0], w[1]));
        }
        let cap = cap_factor.saturating_mul(k);
        let mut extra = cap.saturating_sub(k - 1);
        while extra > 0 {
            let i = indices[rng.random_range(0..k)];
            let j = indices[rng.random_range(0..k)];
            if i != j {
                pairs.push((i, j));
                extra -= 1;
            }
        }
    }
    PairBatch::new(pairs, samples)
}

/// Which head the predictor carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// 6D rotation head (stage one).
    Relative,
    /// Per-angle logits + offsets head (stage two).
    Absolute,
}

/// Split view of an absolute-stage head output: per-angle logits and
/// per-angle offset vectors, ordered [azimuth, elevation, roll].
#[derive(Debug, Clone)]
pub struct AbsoluteSplit {
    pub logits: [Vec<f64>; 3],
    pub offsets: [Vec<f64>; 3],
}

/// A linear map from features to pose outputs: `out = W·x + b`.
///
/// Relative stage: 6 outputs (the 6D rotation representation).
/// Absolute stage: one logit and one offset per bin across the three
/// angles (`2·(Z_α+Z_β+Z_γ)` outputs; logits first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ToyPredictor {
    stage: Stage,
    bin_spec: Option<BinSpec>,
    w: DMatrix<f64>,
    b: DVector<f64>,
}

impl ToyPredictor {
    /// Relative-stage predictor: bias starts at the identity rotation's 6D
    /// embedding (1,0,0,0,1,0) — far from Gram-Schmidt degeneracy — with
    /// small Gaussian weights.
    pub fn relative(feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = DMatrix::from_fn(6, feature_dim, |_, _| {
            0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        let b = DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        ToyPredictor {
            stage: Stage::Relative,
            bin_spec: None,
            w,
            b,
        }
    }

    /// Absolute-stage predictor for a binning layout.
    pub fn absolute(feature_dim: usize, spec: BinSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out_dim = 2 * spec.total_bins();
        let w = DMatrix::from_fn(out_dim, feature_dim, |_, _| {
            0.01 * rng.sample::<f64, _>(StandardNormal)
        });
        let b = DVector::zeros(out_dim);
        ToyPredictor {
            stage: Stage::Absolute,
            bin_spec: Some(spec),
            w,
            b,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn bin_spec(&self) -> Option<&BinSpec> {
        self.bin_spec.as_ref()
    }

    pub fn feature_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>, LearnError> {
        if x.len() != self.feature_dim() {
            return Err(LearnError::DimensionMismatch {
                got: x.len(),
                expected: self.feature_dim(),
            });
        }
        let xv = DVector::from_column_slice(x);
        Ok(&self.w * xv + &self.b)
    }

    /// Relative-stage head output as a 6D value.
    pub fn head_sixd(&self, x: &[f64]) -> Result<SixD, LearnError> {
        if self.stage != Stage::Relative {
            return Err(LearnError::WrongStage {
                expected: "relative",
            });
        }
        let out = self.forward(x)?;
        Ok(SixD([out[0], out[1], out[2], out[3], out[4], out[5]]))
    }

    /// Splits an absolute-stage output vector into per-angle logits and
    /// offsets.
    pub fn split_absolute(&self, out: &DVector<f64>) -> Result<AbsoluteSplit, LearnError> {
        let spec = self.bin_spec.as_ref().ok_or(LearnError::WrongStage {
            expected: "absolute",
        })?;
        let counts = spec.bin_counts();
        let total = spec.total_bins();
        if out.len() != 2 * total {
            return Err(LearnError::LengthMismatch {
                what: "head output",
                got: out.len(),
                expected: 2 * total,
            });
        }
        let slice = out.as_slice();
        let mut logits: [Vec<f64>; 3] = [vec![], vec![], vec![]];
        let mut offsets: [Vec<f64>; 3] = [vec![], vec![], vec![]];
        let mut pos = 0;
        for (i, z) in counts.iter().enumerate() {
            logits[i] = slice[pos..pos + z].to_vec();
            pos += z;
        }
        for (i, z) in counts.iter().enumerate() {
            offsets[i] = slice[pos..pos + z].to_vec();
            pos += z;
        }
        Ok(AbsoluteSplit { logits, offsets })
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.b
    }

    /// Direct parameter access, e.g. for hand-built heads or perturbation
    /// probes. Shapes must be preserved.
    pub fn weights_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.w
    }

    pub fn bias_mut(&mut self) -> &mut DVector<f64> {
        &mut self.b
    }

    pub(crate) fn apply_update(&mut self, grad: &Gradients, lr: f64) {
        self.w -= lr * &grad.w;
        self.b -= lr * &grad.b;
    }
}

/// Checkpoint wire format: row-major weights, stage tag, binning layout.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    stage: Stage,
    bin_spec: Option<BinSpec>,
    feature_dim: usize,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<Checkpoint> for ToyPredictor {
    type Error = String;

    fn try_from(c: Checkpoint) -> Result<Self, String> {
        let out_dim = c.b.len();
        if c.w.len() != out_dim {
            return Err(format!(
                "weight rows {} do not match bias length {out_dim}",
                c.w.len()
            ));
        }
        for row in &c.w {
            if row.len() != c.feature_dim {
                return Err(format!(
                    "weight row length {} does not match feature_dim {}",
                    row.len(),
                    c.feature_dim
                ));
            }
        }
        let expected = match (c.stage, &c.bin_spec) {
            (Stage::Relative, _) => 6,
            (Stage::Absolute, Some(spec)) => 2 * spec.total_bins(),
            (Stage::Absolute, None) => return Err("absolute checkpoint needs bin_spec".into()),
        };
        if out_dim != expected {
            return Err(format!("output dim {out_dim}, expected {expected}"));
        }
        let w = DMatrix::from_fn(out_dim, c.feature_dim, |r, col| c.w[r][col]);
        Ok(ToyPredictor {
            stage: c.stage,
            bin_spec: c.bin_spec,
            w,
            b: DVector::from_vec(c.b),
        })
    }
}

impl From<ToyPredictor> for Checkpoint {
    fn from(p: ToyPredictor) -> Checkpoint {
        let w = (0..p.w.nrows())
            .map(|r| p.w.row(r).iter().cloned().collect())
            .collect();
        Checkpoint {
            stage: p.stage,
            bin_spec: p.bin_spec,
            feature_dim: p.w.ncols(),
            w,
            b: p.b.as_slice().to_vec(),
        }
    }
}

/// Shuffles indices deterministically for minibatching.
pub(crate) fn shuffled_indices(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(rng);
    indices
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotations::random_rotation;

    pub(crate) fn toy_samples(
        n_videos: usize,
        frames: usize,
        d: usize,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Sample> {
        let mut out = Vec::new();
        for v in 0..n_videos {
            for f in 0..frames {
                out.push(Sample {
                    video_id: format!("v{v:02}"),
                    frame_id: format!("v{v:02}/f{f:03}"),
                    features: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                    rotation: random_rotation(rng),
                });
            }
        }
        out
    }

    #[test]
    fn pair_batch_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let samples = toy_samples(2, 3, 4, &mut rng);
        assert!(PairBatch::new(vec![(0, 1)], &samples).is_ok());
        assert!(matches!(
            PairBatch::new(vec![(0, 9)], &samples),
            Err(LearnError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            PairBatch::new(vec![(1, 1)], &samples),
            Err(LearnError::SelfPair { .. })
        ));
        assert!(matches!(
            PairBatch::new(vec![(0, 3)], &samples),
            Err(LearnError::CrossVideoPair { .. })
        ));
    }

    #[test]
    fn sampler_respects_cap_and_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples = toy_samples(3, 10, 4, &mut rng);
        let batch = sample_pairs(&samples, 4, &mut rng).unwrap();
        assert_eq!(batch.len(), 3 * 4 * 10);
        // Adjacent pairs come first per video.
        assert_eq!(batch.pairs()[0], (0, 1));
        for &(i, j) in batch.pairs() {
            assert_eq!(samples[i].video_id, samples[j].video_id);
            assert_ne!(i, j);
        }
    }

    #[test]
    fn feature_dim_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut samples = toy_samples(1, 3, 5, &mut rng);
        assert_eq!(feature_dim(&samples).unwrap(), 5);
        samples[1].features.pop();
        assert!(matches!(
            feature_dim(&samples),
            Err(LearnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn predictor_shapes_and_checkpoint_round_trip() {
        let spec = BinSpec::default();
        let p = ToyPredictor::absolute(9, spec, 3);
        assert_eq!(p.out_dim(), 120);
        let json = serde_json::to_string(&p).unwrap();
        let back: ToyPredictor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);

        let p = ToyPredictor::relative(9, 3);
        assert_eq!(p.out_dim(), 6);
        assert_eq!(p.bias().as_slice(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let back: ToyPredictor =
            serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn checkpoint_rejects_inconsistent_shapes() {
        let json = r#"{"stage":"relative","bin_spec":null,"feature_dim":2,
                       "w":[[1,2],[3,4]],"b":[0,0,0,0,0,0]}"#;
        assert!(serde_json::from_str::<ToyPredictor>(json).is_err());
    }

    #[test]
    fn sample_json_shape() {
        let s = Sample {
            video_id: "v".into(),
            frame_id: "v/f0".into(),
            features: vec![0.5, -1.0],
            rotation: Rotation::identity(),
        };
        let json = serde_json::to_value(&s).unwrap();
        assert_eq!(json["features"].as_array().unwrap().len(), 2);
        assert_eq!(json["rotation"].as_array().unwrap().len(), 9);
    }
}
