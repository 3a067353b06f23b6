//! Synthetic turntable generator with ground-truth bookkeeping.
//!
//! Produces videos of canonical rotations along a smooth azimuth sweep,
//! annotations gauged per video and perturbed by small SfM-style noise, and
//! rotation-revealing features (the flattened canonical rotation plus
//! Gaussian noise) so a linear predictor can recover pose. A configurable
//! fraction of videos gets a 180°-azimuth corruption on the second half of
//! their frames — in the features only, annotations keep the truth — which
//! reproduces the front/rear appearance confusion that calibration-error
//! filtering is meant to catch.
//!
//! Generation is deterministic per seed: each video draws from its own
//! counter-derived ChaCha8 stream, so videos are independent of how many
//! others are generated (and may be generated in parallel).

use crate::calibration::{auto_calibrate, refine_or_keep, PosePair, PosePairSet, Side};
use crate::eval::{report_from_errors, EvalReport};
use crate::learning::Sample;
use crate::rotations::{
    euler_to_rotation, geodesic_distance, random_rotation, small_random_rotation, wrap_angle,
    EulerPose, Rotation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("predictions have length {got}, truth has {expected} frames")]
    LengthMismatch { got: usize, expected: usize },
}

/// Generator configuration. The default matches the reference two-stage
/// demonstration: 20 videos × 60 frames sweeping two full turns, 3° SfM
/// noise, 20% of videos flip-corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub frames_per_video: usize,
    /// Total azimuth covered by each video, radians.
    pub azimuth_sweep: f64,
    pub elevation_base: f64,
    pub elevation_jitter: f64,
    pub roll_jitter: f64,
    /// Per-frame annotation noise (half-normal angle), radians.
    pub sfm_noise: f64,
    /// Per-coordinate Gaussian feature noise.
    pub feature_noise: f64,
    /// Fraction of videos whose second-half frames get the 180°-azimuth
    /// appearance corruption.
    pub flip_fraction: f64,
    pub feature_dim: usize,
    pub seed: u64,
    /// Test hook: skip the per-video Haar gauge.
    #[serde(default)]
    pub force_identity_gauges: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 20,
            frames_per_video: 60,
            azimuth_sweep: 4.0 * PI,
            elevation_base: 0.2,
            elevation_jitter: 0.05,
            roll_jitter: 0.03,
            sfm_noise: 3f64.to_radians(),
            feature_noise: 0.01,
            flip_fraction: 0.2,
            feature_dim: 9,
            seed: 0,
            force_identity_gauges: false,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.n_videos == 0 {
            return Err(SynthError::BadConfig("n_videos must be positive".into()));
        }
        if self.frames_per_video < 2 {
            return Err(SynthError::BadConfig(
                "frames_per_video must be at least 2".into(),
            ));
        }
        for (name, v) in [
            ("elevation_jitter", self.elevation_jitter),
            ("roll_jitter", self.roll_jitter),
            ("sfm_noise", self.sfm_noise),
            ("feature_noise", self.feature_noise),
        ] {
            if v < 0.0 || v.is_nan() {
                return Err(SynthError::BadConfig(format!("{name} must be >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_fraction) {
            return Err(SynthError::BadConfig(
                "flip_fraction must be in [0, 1]".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(SynthError::BadConfig("feature_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Ground-truth bookkeeping: per-video gauges, per-frame canonical
/// rotations, and the set of flip-corrupted frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthTruth {
    pub gauges: BTreeMap<String, Rotation>,
    pub canonical: BTreeMap<String, Rotation>,
    pub flipped: BTreeSet<String>,
}

impl SynthTruth {
    /// Videos containing at least one flipped frame.
    pub fn flipped_videos(&self) -> BTreeSet<String> {
        self.flipped
            .iter()
            .filter_map(|fid| fid.split('/').next())
            .map(str::to_string)
            .collect()
    }

    /// Restricts the canonical map (and flip flags) to the given frames;
    /// gauges are kept whole.
    pub fn restrict(&self, frame_ids: &BTreeSet<String>) -> SynthTruth {
        SynthTruth {
            gauges: self.gauges.clone(),
            canonical: self
                .canonical
                .iter()
                .filter(|(id, _)| frame_ids.contains(*id))
                .map(|(id, r)| (id.clone(), *r))
                .collect(),
            flipped: self.flipped.intersection(frame_ids).cloned().collect(),
        }
    }
}

pub fn video_id(index: usize) -> String {
    format!("video_{index:04}")
}

pub fn frame_id(video: usize, frame: usize) -> String {
    format!("{}/f{frame:04}", video_id(video))
}

/// Generates the dataset and its truth. Annotations are
/// `noise · G_i · Q_v` (right gauge); features reveal the canonical pose
/// except on flipped frames, where they reveal its 180°-azimuth variant.
pub fn generate(config: &SynthConfig) -> Result<(Vec<Sample>, SynthTruth), SynthError> {
    config.validate()?;
    let n_flipped = (config.flip_fraction * config.n_videos as f64).round() as usize;
    let mut samples = Vec::with_capacity(config.n_videos * config.frames_per_video);
    let mut truth = SynthTruth {
        gauges: BTreeMap::new(),
        canonical: BTreeMap::new(),
        flipped: BTreeSet::new(),
    };
    for v in 0..config.n_videos {
        let video_flipped = v < n_flipped;
        let (video_samples, video_truth) = generate_video(config, v, video_flipped);
        samples.extend(video_samples);
        truth.gauges.extend(video_truth.gauges);
        truth.canonical.extend(video_truth.canonical);
        truth.flipped.extend(video_truth.flipped);
    }
    Ok((samples, truth))
}

fn generate_video(
    config: &SynthConfig,
    v: usize,
    video_flipped: bool,
) -> (Vec<Sample>, SynthTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(v as u64 + 1);

    let vid = video_id(v);
    let gauge = if config.force_identity_gauges {
        Rotation::identity()
    } else {
        random_rotation(&mut rng)
    };
    let phase = rng.random_range(-PI..PI);
    let k = config.frames_per_video;

    let mut samples = Vec::with_capacity(k);
    let mut truth = SynthTruth {
        gauges: BTreeMap::new(),
        canonical: BTreeMap::new(),
        flipped: BTreeSet::new(),
    };
    truth.gauges.insert(vid.clone(), gauge);

    for i in 0..k {
        let fid = frame_id(v, i);
        let azimuth = wrap_angle(phase + config.azimuth_sweep * i as f64 / (k - 1) as f64);
        let elevation = (config.elevation_base
            + config.elevation_jitter * rng.sample::<f64, _>(StandardNormal))
        .clamp(-PI / 2.0, PI / 2.0);
        let roll = wrap_angle(config.roll_jitter * rng.sample::<f64, _>(StandardNormal));
        let canonical = euler_to_rotation(&EulerPose::new(azimuth, elevation, roll));

        let noise = small_random_rotation(config.sfm_noise, &mut rng);
        let annotation = &(&noise * &canonical) * &gauge;

        // Appearance corruption hits the second half of a flipped video.
        let frame_flipped = video_flipped && i >= k / 2;
        let appearance = if frame_flipped {
            euler_to_rotation(&EulerPose::new(wrap_angle(azimuth + PI), elevation, roll))
        } else {
            canonical
        };
        let features = features_for(&appearance, config, &mut rng);

        truth.canonical.insert(fid.clone(), canonical);
        if frame_flipped {
            truth.flipped.insert(fid.clone());
        }
        samples.push(Sample {
            video_id: vid.clone(),
            frame_id: fid,
            features,
            rotation: annotation,
        });
    }
    (samples, truth)
}

/// Flattened rotation entries truncated or zero-padded to `feature_dim`,
/// plus per-coordinate Gaussian noise.
fn features_for(appearance: &Rotation, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = appearance.to_row_major();
    (0..config.feature_dim)
        .map(|d| {
            let clean = if d < 9 { base[d] } else { 0.0 };
            clean + config.feature_noise * rng.sample::<f64, _>(StandardNormal)
        })
        .collect()
}

/// Aligns predictions to the canonical truth with one global rotation
/// (auto side, refined) and evaluates. Predictions follow the iteration
/// order of `truth.canonical` (sorted frame ids).
pub fn oracle_eval(predictions: &[Rotation], truth: &SynthTruth) -> Result<EvalReport, SynthError> {
    if predictions.len() != truth.canonical.len() {
        return Err(SynthError::LengthMismatch {
            got: predictions.len(),
            expected: truth.canonical.len(),
        });
    }
    let items: Vec<PosePair> = truth
        .canonical
        .iter()
        .zip(predictions)
        .map(|((fid, canonical), pred)| PosePair {
            id: fid.clone(),
            annotated: *canonical,
            predicted: *pred,
        })
        .collect();
    let set = PosePairSet::new(items).map_err(|_| SynthError::LengthMismatch {
        got: 0,
        expected: truth.canonical.len(),
    })?;
    let calib = refine_or_keep(&set, auto_calibrate(&set));
    let errors: Vec<f64> = set
        .items()
        .iter()
        .map(|pair| {
            let aligned = match calib.side {
                Side::Left => &calib.delta * &pair.annotated,
                Side::Right => &pair.annotated * &calib.delta,
            };
            geodesic_distance(&pair.predicted, &aligned)
        })
        .collect();
    Ok(report_from_errors(errors, Some(calib)).expect("non-empty"))
}
