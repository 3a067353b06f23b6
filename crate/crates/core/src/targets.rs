//! Bin-index + within-bin-offset encoding of Euler poses.
//!
//! Each angle is discretized into fixed-width bins over its declared range
//! (azimuth `[−π, π)`, elevation `[−π/2, π/2]`, roll `[−π, π)`). A pose maps
//! to a zero-based bin index (classification target) and a fractional
//! offset in `[0, 1)` within that bin (regression target). Decoding is
//! `range_min + (bin + offset)·bin_size`, the exact arithmetic inverse.

use crate::rotations::EulerPose;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TargetError {
    #[error("{angle} {value:.6} rad is outside [{min:.6}, {max:.6}]")]
    OutOfRange {
        angle: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("bin size {bin_size:.6} rad does not evenly divide the angle ranges")]
    BadBinSize { bin_size: f64 },
}

/// The three encoded angles, in a fixed order used for flattened
/// logit/offset vectors.
pub const ANGLE_NAMES: [&str; 3] = ["azimuth", "elevation", "roll"];

/// Per-angle (range minimum, range length). Azimuth and roll are half-open
/// at the top; elevation is closed (±π/2 are legal poses).
const RANGES: [(f64, f64); 3] = [(-PI, 2.0 * PI), (-PI / 2.0, PI), (-PI, 2.0 * PI)];

/// Uniform binning layout: one bin size shared by all three angles, with
/// per-angle bin counts derived from the range lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    bin_size: f64,
    bins: [usize; 3],
}

impl BinSpec {
    /// Validates that `bin_size` tiles all three ranges exactly (within a
    /// 1e-9 relative tolerance on the division).
    pub fn new(bin_size: f64) -> Result<Self, TargetError> {
        if bin_size <= 0.0 || bin_size.is_nan() {
            return Err(TargetError::BadBinSize { bin_size });
        }
        let mut bins = [0usize; 3];
        for (slot, (_, len)) in bins.iter_mut().zip(RANGES) {
            let count = len / bin_size;
            if (count - count.round()).abs() > 1e-9 || count.round() < 1.0 {
                return Err(TargetError::BadBinSize { bin_size });
            }
            *slot = count.round() as usize;
        }
        Ok(BinSpec { bin_size, bins })
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    /// Bin counts as [azimuth, elevation, roll].
    pub fn bin_counts(&self) -> [usize; 3] {
        self.bins
    }

    /// Total logits (or offsets) across the three angles.
    pub fn total_bins(&self) -> usize {
        self.bins.iter().sum()
    }
}

impl Default for BinSpec {
    /// 15° bins: 24 azimuth, 12 elevation, 24 roll.
    fn default() -> Self {
        BinSpec::new(PI / 12.0).expect("default bin size tiles the ranges")
    }
}

/// One angle's encoding: zero-based bin index plus offset in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleTarget {
    pub bin: usize,
    pub offset: f64,
}

/// Encoded pose: a bin/offset pair per Euler angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseTarget {
    pub azimuth: AngleTarget,
    pub elevation: AngleTarget,
    pub roll: AngleTarget,
}

impl PoseTarget {
    pub fn angles(&self) -> [AngleTarget; 3] {
        [self.azimuth, self.elevation, self.roll]
    }
}

/// Largest f64 strictly below 1; offsets are clamped to `[0, 1 − ulp]`.
const OFFSET_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

fn encode_angle(
    name: &'static str,
    value: f64,
    range: (f64, f64),
    z: usize,
    bin_size: f64,
) -> Result<AngleTarget, TargetError> {
    let (min, len) = range;
    // The upper endpoint is accepted for every angle and clamped into the
    // last bin; for the half-open ranges it can only arise from round-off.
    if value < min || value > min + len {
        return Err(TargetError::OutOfRange {
            angle: name,
            value,
            min,
            max: min + len,
        });
    }
    let shifted = value - min;
    let scaled = shifted / bin_size;
    let mut bin = scaled.floor() as usize;
    if bin >= z {
        bin = z - 1;
    }
    let offset = (scaled - bin as f64).clamp(0.0, OFFSET_MAX);
    Ok(AngleTarget { bin, offset })
}

/// Encodes an in-range Euler pose into per-angle bin indices and offsets.
pub fn encode_pose(p: &EulerPose, spec: &BinSpec) -> Result<PoseTarget, TargetError> {
    let values = [p.azimuth, p.elevation, p.roll];
    let mut out = [AngleTarget {
        bin: 0,
        offset: 0.0,
    }; 3];
    for i in 0..3 {
        out[i] = encode_angle(ANGLE_NAMES[i], values[i], RANGES[i], spec.bins[i], spec.bin_size)?;
    }
    Ok(PoseTarget {
        azimuth: out[0],
        elevation: out[1],
        roll: out[2],
    })
}

/// Decodes a target back to angles: `range_min + (bin + offset)·bin_size`
/// per angle. Exact inverse of [`encode_pose`] for in-range inputs.
pub fn decode_pose(t: &PoseTarget, spec: &BinSpec) -> EulerPose {
    let angles = t.angles();
    let mut values = [0.0f64; 3];
    for i in 0..3 {
        let (min, _) = RANGES[i];
        values[i] = min + (angles[i].bin as f64 + angles[i].offset) * spec.bin_size;
    }
    EulerPose::new(values[0], values[1], values[2])
}

/// Decodes raw per-angle prediction heads: for each angle, takes the argmax
/// logit (ties to the lowest index), reads the offset at that bin, clamps it
/// to `[0, 1)`, and maps through the binning rule.
pub fn decode_prediction(
    logits: [&[f64]; 3],
    offsets: [&[f64]; 3],
    spec: &BinSpec,
) -> Result<EulerPose, TargetError> {
    let mut angles = [AngleTarget {
        bin: 0,
        offset: 0.0,
    }; 3];
    for i in 0..3 {
        let z = spec.bins[i];
        if logits[i].len() != z {
            return Err(TargetError::LengthMismatch {
                what: "logits",
                got: logits[i].len(),
                expected: z,
            });
        }
        if offsets[i].len() != z {
            return Err(TargetError::LengthMismatch {
                what: "offsets",
                got: offsets[i].len(),
                expected: z,
            });
        }
        let mut best = 0usize;
        for (j, &v) in logits[i].iter().enumerate() {
            if v > logits[i][best] {
                best = j;
            }
        }
        angles[i] = AngleTarget {
            bin: best,
            offset: offsets[i][best].clamp(0.0, OFFSET_MAX),
        };
    }
    Ok(decode_pose(
        &PoseTarget {
            azimuth: angles[0],
            elevation: angles[1],
            roll: angles[2],
        },
        spec,
    ))
}
