//! Deterministic minibatch gradient descent for the toy predictor.
//!
//! Plain gradient descent with a fixed learning rate and an optional ×0.1
//! decay at two schedule points. Everything is seeded: the pair sampler,
//! the per-epoch shuffles, and the initial weights, so identical seeds
//! produce bit-identical traces.

use super::loss::{absolute_loss_grad, relative_loss_grad, Gradients};
use super::{
    feature_dim, sample_pairs, shuffled_indices, LearnError, PairBatch, Sample, Stage,
    ToyPredictor,
};
use crate::rotations::{euler_to_rotation, rotation_to_euler, sixd_to_rotation, Rotation};
use crate::targets::{decode_prediction, encode_pose, PoseTarget};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "objective")]
pub enum Objective {
    /// Mean chordal-squared relative loss over same-video pairs.
    Relative,
    /// Bin classification + offset regression on the sample annotations.
    Absolute { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Multiply the learning rate by 0.1 at 60% and 80% of the epochs.
    pub lr_decay: bool,
    /// Pairs per video = factor × video length (relative objective only).
    pub pair_cap_factor: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            epochs: 200,
            batch_size: 64,
            seed: 0,
            lr_decay: true,
            pair_cap_factor: 4,
        }
    }
}

/// Trained predictor plus its loss history.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub predictor: ToyPredictor,
    /// Full-dataset loss before training and after every epoch.
    pub trace: Vec<f64>,
    /// Full-dataset loss at the learning-rate schedule boundaries
    /// (initial, each decay point, final). Non-increasing on a healthy run.
    pub checkpoint_losses: Vec<f64>,
}

struct Problem<'a> {
    samples: &'a [Sample],
    pairs: Option<PairBatch>,
    targets: Option<Vec<PoseTarget>>,
    lambda: f64,
}

impl Problem<'_> {
    /// Number of atomic work items (pairs or samples).
    fn len(&self) -> usize {
        match &self.pairs {
            Some(pairs) => pairs.len(),
            None => self.samples.len(),
        }
    }

    fn batch_loss_grad(
        &self,
        predictor: &ToyPredictor,
        batch: &[usize],
    ) -> Result<(f64, Gradients), LearnError> {
        match &self.pairs {
            Some(pairs) => {
                let subset: Vec<(usize, usize)> =
                    batch.iter().map(|&k| pairs.pairs()[k]).collect();
                let sub = PairBatch::new(subset, self.samples)?;
                relative_loss_grad(predictor, self.samples, &sub)
            }
            None => {
                let targets = self.targets.as_ref().unwrap();
                let mut grads =
                    Gradients::zeros(predictor.out_dim(), predictor.feature_dim());
                let mut loss = 0.0;
                for &k in batch {
                    let (l, g) =
                        absolute_loss_grad(predictor, &self.samples[k], &targets[k], self.lambda)?;
                    loss += l;
                    grads.w += g.w;
                    grads.b += g.b;
                }
                let scale = 1.0 / batch.len() as f64;
                grads.w *= scale;
                grads.b *= scale;
                Ok((loss * scale, grads))
            }
        }
    }

    fn full_loss(&self, predictor: &ToyPredictor) -> Result<f64, LearnError> {
        let all: Vec<usize> = (0..self.len()).collect();
        Ok(self.batch_loss_grad(predictor, &all)?.0)
    }
}

/// Trains the predictor with deterministic minibatch gradient descent.
///
/// Aborts with [`LearnError::NonFiniteLoss`] (reporting the global step
/// index) if a batch loss diverges.
pub fn train(
    predictor: ToyPredictor,
    dataset: &[Sample],
    objective: Objective,
    config: &TrainConfig,
) -> Result<TrainOutput, LearnError> {
    let d = feature_dim(dataset)?;
    if d != predictor.feature_dim() {
        return Err(LearnError::DimensionMismatch {
            got: d,
            expected: predictor.feature_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let problem = match objective {
        Objective::Relative => {
            if predictor.stage() != Stage::Relative {
                return Err(LearnError::WrongStage {
                    expected: "relative",
                });
            }
            let pairs = sample_pairs(dataset, config.pair_cap_factor, &mut rng)?;
            if pairs.is_empty() {
                return Err(LearnError::Empty);
            }
            Problem {
                samples: dataset,
                pairs: Some(pairs),
                targets: None,
                lambda: 0.0,
            }
        }
        Objective::Absolute { lambda } => {
            let spec = *predictor.bin_spec().ok_or(LearnError::WrongStage {
                expected: "absolute",
            })?;
            let targets = dataset
                .iter()
                .map(|s| encode_pose(&rotation_to_euler(&s.rotation), &spec))
                .collect::<Result<Vec<_>, _>>()?;
            Problem {
                samples: dataset,
                pairs: None,
                targets: Some(targets),
                lambda,
            }
        }
    };

    let mut predictor = predictor;
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(problem.full_loss(&predictor)?);
    let mut checkpoint_losses = vec![trace[0]];

    let decay_points = if config.lr_decay {
        vec![config.epochs * 3 / 5, config.epochs * 4 / 5]
    } else {
        vec![]
    };
    let mut lr = config.lr;
    let batch_size = config.batch_size.max(1);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        if decay_points.contains(&epoch) && epoch > 0 {
            checkpoint_losses.push(*trace.last().unwrap());
            lr *= 0.1;
        }
        let order = shuffled_indices(problem.len(), &mut rng);
        for batch in order.chunks(batch_size) {
            let (loss, grads) = problem.batch_loss_grad(&predictor, batch)?;
            if !loss.is_finite() {
                return Err(LearnError::NonFiniteLoss { step });
            }
            predictor.apply_update(&grads, lr);
            step += 1;
        }
        trace.push(problem.full_loss(&predictor)?);
    }
    checkpoint_losses.push(*trace.last().unwrap());

    Ok(TrainOutput {
        predictor,
        trace,
        checkpoint_losses,
    })
}

/// Maps samples to rotations: Gram-Schmidt of the 6D head (relative stage)
/// or argmax-bin decoding of the logit/offset heads (absolute stage).
pub fn predict_rotations(
    predictor: &ToyPredictor,
    samples: &[Sample],
) -> Result<Vec<Rotation>, LearnError> {
    samples
        .iter()
        .map(|s| match predictor.stage() {
            Stage::Relative => {
                let v = predictor.head_sixd(&s.features)?;
                Ok(sixd_to_rotation(&v)?)
            }
            Stage::Absolute => {
                let spec = predictor.bin_spec().ok_or(LearnError::WrongStage {
                    expected: "absolute",
                })?;
                let out = predictor.forward(&s.features)?;
                let split = predictor.split_absolute(&out)?;
                let pose = decode_prediction(
                    [&split.logits[0], &split.logits[1], &split.logits[2]],
                    [&split.offsets[0], &split.offsets[1], &split.offsets[2]],
                    spec,
                )?;
                Ok(euler_to_rotation(&pose))
            }
        })
        .collect()
}
