//! The two training objectives and their analytic gradients.
//!
//! Relative loss: mean pair distance between annotated and predicted
//! relative rotations; invariant to any per-video right gauge on either
//! side. Training differentiates the smooth chordal-squared variant through
//! the Gram-Schmidt map; the geodesic variant is for reporting.
//!
//! Absolute loss: per-angle cross-entropy over bins plus a smooth-L1 offset
//! term, supervised only at the ground-truth bin.

use super::{LearnError, PairBatch, Sample, Stage, ToyPredictor};
use crate::rotations::{
    chordal_distance_sq, geodesic_distance, relative_rotation, sixd_to_rotation, Rotation, SixD,
};
use crate::targets::{BinSpec, PoseTarget};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Distance choice for the relative objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMetric {
    Geodesic,
    ChordalSq,
}

impl PairMetric {
    fn eval(self, a: &Rotation, b: &Rotation) -> f64 {
        match self {
            PairMetric::Geodesic => geodesic_distance(a, b),
            PairMetric::ChordalSq => chordal_distance_sq(a, b),
        }
    }
}

/// Parameter gradients for a [`ToyPredictor`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Gradients {
    pub fn zeros(out_dim: usize, feature_dim: usize) -> Self {
        Gradients {
            w: DMatrix::zeros(out_dim, feature_dim),
            b: DVector::zeros(out_dim),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.w.norm_squared() + self.b.norm_squared()).sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.w *= factor;
        self.b *= factor;
    }
}

/// Mean pair distance between annotated relatives `R_i R_jᵀ` and predicted
/// relatives `R̂_i R̂_jᵀ`.
pub fn relative_loss(
    pred: &[Rotation],
    anno: &[Rotation],
    pairs: &PairBatch,
    metric: PairMetric,
) -> Result<f64, LearnError> {
    if pred.len() != anno.len() {
        return Err(LearnError::LengthMismatch {
            what: "predictions",
            got: pred.len(),
            expected: anno.len(),
        });
    }
    if pairs.is_empty() {
        return Err(LearnError::Empty);
    }
    let mut total = 0.0;
    for &(i, j) in pairs.pairs() {
        for idx in [i, j] {
            if idx >= pred.len() {
                return Err(LearnError::IndexOutOfRange {
                    index: idx,
                    len: pred.len(),
                });
            }
        }
        let target = relative_rotation(&anno[i], &anno[j]);
        let predicted = relative_rotation(&pred[i], &pred[j]);
        total += metric.eval(&target, &predicted);
    }
    Ok(total / pairs.len() as f64)
}

/// Cached Gram-Schmidt intermediates for one forward pass.
struct GsCache {
    a2: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    n1: f64,
    n2: f64,
    rotation: Rotation,
}

fn gs_forward(v: &SixD) -> Result<GsCache, LearnError> {
    let rotation = sixd_to_rotation(v)?;
    let a1 = v.a1();
    let a2 = v.a2();
    let n1 = a1.norm();
    let b1 = a1 / n1;
    let w = a2 - b1 * a2.dot(&b1);
    let n2 = w.norm();
    let b2 = w / n2;
    Ok(GsCache {
        a2,
        b1,
        b2,
        n1,
        n2,
        rotation,
    })
}

/// Vector-Jacobian product of the Gram-Schmidt map: pulls a gradient with
/// respect to the rotation matrix (columns g₁ g₂ g₃) back to the 6D input.
fn gs_vjp(cache: &GsCache, grad_r: &Matrix3<f64>) -> [f64; 6] {
    let g1 = Vector3::new(grad_r[(0, 0)], grad_r[(1, 0)], grad_r[(2, 0)]);
    let g2 = Vector3::new(grad_r[(0, 1)], grad_r[(1, 1)], grad_r[(2, 1)]);
    let g3 = Vector3::new(grad_r[(0, 2)], grad_r[(1, 2)], grad_r[(2, 2)]);
    let (b1, b2) = (cache.b1, cache.b2);

    // b₃ = b₁ × b₂ feeds both predecessors.
    let gb1 = g1 + b2.cross(&g3);
    let gb2 = g2 + g3.cross(&b1);

    // b₂ = w/‖w‖, w = a₂ − (a₂·b₁)b₁.
    let gw = (gb2 - b2 * gb2.dot(&b2)) / cache.n2;
    let ga2 = gw - b1 * gw.dot(&b1);

    // b₁ = a₁/‖a₁‖, with the w-path contribution folded in.
    let h = gb1 - cache.a2 * gw.dot(&b1) - gw * cache.a2.dot(&b1);
    let ga1 = (h - b1 * h.dot(&b1)) / cache.n1;

    [ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z]
}

/// Loss and analytic parameter gradient of the mean chordal-squared
/// relative loss, backpropagated through Gram-Schmidt and the linear head.
/// Matches central finite differences to 1e-4 relative error.
pub fn relative_loss_grad(
    predictor: &ToyPredictor,
    samples: &[Sample],
    pairs: &PairBatch,
) -> Result<(f64, Gradients), LearnError> {
    if predictor.stage() != Stage::Relative {
        return Err(LearnError::WrongStage {
            expected: "relative",
        });
    }
    if pairs.is_empty() {
        return Err(LearnError::Empty);
    }

    // Forward pass, cached per distinct sample index in the batch.
    let mut used: Vec<usize> = pairs.pairs().iter().flat_map(|&(i, j)| [i, j]).collect();
    used.sort_unstable();
    used.dedup();
    let mut cache: Vec<Option<GsCache>> = Vec::new();
    cache.resize_with(samples.len(), || None);
    for &idx in &used {
        if idx >= samples.len() {
            return Err(LearnError::IndexOutOfRange {
                index: idx,
                len: samples.len(),
            });
        }
        let v = predictor.head_sixd(&samples[idx].features)?;
        cache[idx] = Some(gs_forward(&v)?);
    }

    // Accumulate ∂L/∂R̂ₖ over pairs: with A = RᵢRⱼᵀ, P = R̂ᵢR̂ⱼᵀ and the
    // pair loss 6 − 2·tr(AᵀP), the matrix gradients are 2(P−A)R̂ⱼ for
    // frame i and 2(P−A)ᵀR̂ᵢ for frame j.
    let mut loss = 0.0;
    let mut grad_r: Vec<Matrix3<f64>> = vec![Matrix3::zeros(); samples.len()];
    for &(i, j) in pairs.pairs() {
        let (ri, rj) = (
            cache[i].as_ref().unwrap().rotation,
            cache[j].as_ref().unwrap().rotation,
        );
        let target = relative_rotation(&samples[i].rotation, &samples[j].rotation);
        let predicted = relative_rotation(&ri, &rj);
        loss += chordal_distance_sq(&target, &predicted);
        let diff = 2.0 * (predicted.matrix() - target.matrix());
        grad_r[i] += diff * rj.matrix();
        grad_r[j] += diff.transpose() * ri.matrix();
    }
    let scale = 1.0 / pairs.len() as f64;
    loss *= scale;

    // Back through Gram-Schmidt and the linear head.
    let mut grads = Gradients::zeros(predictor.out_dim(), predictor.feature_dim());
    for &idx in &used {
        let gv = gs_vjp(cache[idx].as_ref().unwrap(), &grad_r[idx]);
        let x = &samples[idx].features;
        for (row, gvi) in gv.iter().enumerate() {
            grads.b[row] += gvi;
            for (col, xv) in x.iter().enumerate() {
                grads.w[(row, col)] += gvi * xv;
            }
        }
    }
    grads.scale(scale);
    Ok((loss, grads))
}

/// Split prediction heads for one sample of the absolute stage.
pub type AbsoluteOutput = super::AbsoluteSplit;

fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Cross-entropy over bins plus `lambda` times the smooth-L1 error of the
/// offset at the ground-truth bin, summed over the three angles.
pub fn absolute_loss(
    logits: [&[f64]; 3],
    offsets: [&[f64]; 3],
    target: &PoseTarget,
    lambda: f64,
    spec: &BinSpec,
) -> Result<f64, LearnError> {
    let counts = spec.bin_counts();
    let angles = target.angles();
    let mut loss = 0.0;
    for a in 0..3 {
        let z = counts[a];
        if logits[a].len() != z {
            return Err(LearnError::LengthMismatch {
                what: "logits",
                got: logits[a].len(),
                expected: z,
            });
        }
        if offsets[a].len() != z {
            return Err(LearnError::LengthMismatch {
                what: "offsets",
                got: offsets[a].len(),
                expected: z,
            });
        }
        let y = angles[a].bin;
        if y >= z {
            return Err(LearnError::IndexOutOfRange { index: y, len: z });
        }
        loss += log_sum_exp(logits[a]) - logits[a][y];
        loss += lambda * smooth_l1(offsets[a][y] - angles[a].offset);
    }
    Ok(loss)
}

/// Loss and analytic parameter gradient of [`absolute_loss`] for a single
/// sample through the linear head. Only the ground-truth bin's offset
/// receives gradient.
pub fn absolute_loss_grad(
    predictor: &ToyPredictor,
    sample: &Sample,
    target: &PoseTarget,
    lambda: f64,
) -> Result<(f64, Gradients), LearnError> {
    let spec = *predictor.bin_spec().ok_or(LearnError::WrongStage {
        expected: "absolute",
    })?;
    let out = predictor.forward(&sample.features)?;
    let split = predictor.split_absolute(&out)?;
    let loss = absolute_loss(
        [&split.logits[0], &split.logits[1], &split.logits[2]],
        [&split.offsets[0], &split.offsets[1], &split.offsets[2]],
        target,
        lambda,
        &spec,
    )?;

    // Gradient on the flat head output: softmax − one-hot on each logit
    // block; smooth-L1 slope at the ground-truth bin of each offset block.
    let counts = spec.bin_counts();
    let total = spec.total_bins();
    let angles = target.angles();
    let mut gout = DVector::zeros(out.len());
    let mut pos = 0;
    for a in 0..3 {
        let z = counts[a];
        let logits = &split.logits[a];
        let lse = log_sum_exp(logits);
        for k in 0..z {
            gout[pos + k] = (logits[k] - lse).exp();
        }
        gout[pos + angles[a].bin] -= 1.0;
        pos += z;
    }
    debug_assert_eq!(pos, total);
    for a in 0..3 {
        let y = angles[a].bin;
        gout[pos + y] += lambda * smooth_l1_grad(split.offsets[a][y] - angles[a].offset);
        pos += counts[a];
    }

    let mut grads = Gradients::zeros(predictor.out_dim(), predictor.feature_dim());
    for row in 0..out.len() {
        let g = gout[row];
        if g == 0.0 {
            continue;
        }
        grads.b[row] = g;
        for (col, xv) in sample.features.iter().enumerate() {
            grads.w[(row, col)] = g * xv;
        }
    }
    Ok((loss, grads))
}
