//! Core SO(3) algebra.
//!
//! Everything downstream (calibration, target encoding, evaluation) speaks
//! in terms of [`Rotation`]: a validated 3×3 special-orthogonal matrix.
//! This module also provides the 6D continuous representation recovered by
//! Gram-Schmidt orthogonalization, the Euler-angle convention used for
//! target encoding, quaternion ingestion for SfM outputs, the geodesic and
//! chordal metrics, and Haar/small-angle random sampling.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::f64::consts::PI;
use std::ops::Mul;
use thiserror::Error;

/// Maximum allowed deviation from orthonormality (`‖RᵀR − I‖_max`) and from
/// unit determinant for a valid [`Rotation`].
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Degeneracy threshold for Gram-Schmidt orthogonalization.
pub const GRAM_SCHMIDT_EPS: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum RotationError {
    /// The 6D value has a near-zero first vector or near-parallel vectors.
    #[error("degenerate 6D rotation representation (vectors parallel or zero within {GRAM_SCHMIDT_EPS})")]
    DegenerateSixD,
    /// Quaternion norm below 1e-6; no direction information left.
    #[error("quaternion norm {norm:.3e} too small to normalize")]
    ZeroQuaternion { norm: f64 },
    /// A 3×3 matrix failed the orthonormality check.
    #[error("matrix is not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },
    /// A 3×3 matrix is orthogonal but has determinant −1 (a reflection).
    #[error("matrix determinant {det:.6} is not +1")]
    NotProperRotation { det: f64 },
}

/// A rotation matrix: 3×3, orthonormal within [`ORTHONORMALITY_TOL`],
/// determinant +1. Immutable; all operations are pure.
///
/// `PartialEq` is exact (bitwise) equality, used by determinism contracts;
/// numeric comparisons go through [`geodesic_distance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix without validation. The caller guarantees the SO(3)
    /// invariants; use [`Rotation::try_from_matrix`] for untrusted input.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(validate(&m).is_ok(), "invalid rotation: {m}");
        Rotation(m)
    }

    /// Validates orthonormality and determinant before wrapping.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self, RotationError> {
        validate(&m)?;
        Ok(Rotation(m))
    }

    /// Builds from 9 row-major entries, validating the SO(3) invariants.
    pub fn try_from_row_major(v: &[f64; 9]) -> Result<Self, RotationError> {
        Self::try_from_matrix(Matrix3::new(
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8],
        ))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The inverse rotation (transpose).
    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Right-handed rotation about the x axis.
    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    /// Right-handed rotation about the y axis.
    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    /// Right-handed rotation about the z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Rodrigues formula. `axis` need not be normalized; it must be nonzero.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let k = axis.normalize();
        let kx = skew(&k);
        let m = Matrix3::identity() + kx * angle.sin() + kx * kx * (1.0 - angle.cos());
        Rotation(m)
    }
}

impl Mul for &Rotation {
    type Output = Rotation;

    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = <[f64; 9]>::deserialize(deserializer)?;
        Rotation::try_from_row_major(&v).map_err(D::Error::custom)
    }
}

fn validate(m: &Matrix3<f64>) -> Result<(), RotationError> {
    let gram = m.transpose() * m - Matrix3::identity();
    let deviation = gram.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if deviation > ORTHONORMALITY_TOL {
        return Err(RotationError::NotOrthonormal { deviation });
    }
    let det = m.determinant();
    if (det - 1.0).abs() > ORTHONORMALITY_TOL {
        return Err(RotationError::NotProperRotation { det });
    }
    Ok(())
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// The 6D continuous rotation representation: two stacked 3-vectors
/// `(a₁, a₂)`, mapped to SO(3) by Gram-Schmidt orthogonalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SixD(pub [f64; 6]);

impl SixD {
    pub fn a1(&self) -> Vector3<f64> {
        Vector3::new(self.0[0], self.0[1], self.0[2])
    }

    pub fn a2(&self) -> Vector3<f64> {
        Vector3::new(self.0[3], self.0[4], self.0[5])
    }
}

/// Orthogonalizes a 6D value into a rotation: `b₁ = a₁/‖a₁‖`,
/// `b₂ = normalize(a₂ − (a₂·b₁)b₁)`, `b₃ = b₁ × b₂` (the columns of R).
pub fn sixd_to_rotation(v: &SixD) -> Result<Rotation, RotationError> {
    let a1 = v.a1();
    let n1 = a1.norm();
    if n1 <= GRAM_SCHMIDT_EPS {
        return Err(RotationError::DegenerateSixD);
    }
    let b1 = a1 / n1;
    let w = v.a2() - b1 * v.a2().dot(&b1);
    let n2 = w.norm();
    if n2 <= GRAM_SCHMIDT_EPS {
        return Err(RotationError::DegenerateSixD);
    }
    let b2 = w / n2;
    let b3 = b1.cross(&b2);
    Ok(Rotation(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Inverse embedding: the first two columns of R.
pub fn rotation_to_sixd(r: &Rotation) -> SixD {
    let m = r.matrix();
    SixD([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ])
}

/// Geodesic distance on SO(3): `arccos((trace(RᵀS) − 1)/2)`, in `[0, π]`.
/// Equals `‖log(RᵀS)‖_F/√2`, the rotation angle taking R to S.
///
/// Evaluated as `atan2(sin θ, cos θ)` with the sine taken from the
/// antisymmetric part of `RᵀS`: identical to the arccos form in exact
/// arithmetic (the cosine is clamped to `[−1, 1]` either way), but the
/// arccos route loses half the significant digits near θ = 0 and θ = π
/// while this stays accurate to machine precision everywhere.
pub fn geodesic_distance(r: &Rotation, s: &Rotation) -> f64 {
    let m = r.0.transpose() * s.0;
    let cos = (0.5 * (m.trace() - 1.0)).clamp(-1.0, 1.0);
    let ax = 0.5 * (m[(2, 1)] - m[(1, 2)]);
    let ay = 0.5 * (m[(0, 2)] - m[(2, 0)]);
    let az = 0.5 * (m[(1, 0)] - m[(0, 1)]);
    let sin = (ax * ax + ay * ay + az * az).sqrt();
    sin.atan2(cos)
}

/// Squared chordal (Frobenius) distance: `‖R − S‖_F² = 6 − 2·trace(RᵀS)`.
pub fn chordal_distance_sq(r: &Rotation, s: &Rotation) -> f64 {
    let t = (r.0.transpose() * s.0).trace();
    let d = 6.0 - 2.0 * t;
    // Clamp round-off negatives without masking NaN (f64::max would).
    if d < 0.0 {
        0.0
    } else {
        d
    }
}

/// The relative rotation `R_i R_jᵀ` taking frame j's pose to frame i's.
/// Invariant under a shared right factor: any per-video gauge Q cancels.
pub fn relative_rotation(r_i: &Rotation, r_j: &Rotation) -> Rotation {
    Rotation(r_i.0 * r_j.0.transpose())
}

/// Euler angles: azimuth about y, elevation about x, roll about z, composed
/// as `R = Rz(roll) · Rx(elevation) · Ry(azimuth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    /// Azimuth α ∈ [−π, π).
    pub azimuth: f64,
    /// Elevation β ∈ [−π/2, π/2].
    pub elevation: f64,
    /// Roll γ ∈ [−π, π).
    pub roll: f64,
}

impl EulerPose {
    pub fn new(azimuth: f64, elevation: f64, roll: f64) -> Self {
        EulerPose {
            azimuth,
            elevation,
            roll,
        }
    }

    /// True when every angle lies within its declared range.
    pub fn in_range(&self) -> bool {
        (-PI..PI).contains(&self.azimuth)
            && (-PI / 2.0..=PI / 2.0).contains(&self.elevation)
            && (-PI..PI).contains(&self.roll)
    }
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2π for inputs just below a period bound.
    if y >= PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Composes `R = Rz(roll) · Rx(elevation) · Ry(azimuth)`.
pub fn euler_to_rotation(p: &EulerPose) -> Rotation {
    &(&Rotation::about_z(p.roll) * &Rotation::about_x(p.elevation)) * &Rotation::about_y(p.azimuth)
}

/// Decomposes a rotation into the Euler convention of [`euler_to_rotation`].
///
/// Away from gimbal lock this is the exact inverse. At `|elevation| = π/2`
/// (within 1e-7) the roll is fixed to 0 and the residual folded into the
/// azimuth, which keeps the decomposition deterministic.
pub fn rotation_to_euler(r: &Rotation) -> EulerPose {
    let m = r.matrix();
    // With R = Rz(γ)Rx(β)Ry(α): m[2][1] = sin β, m[2][0] = −cos β sin α,
    // m[2][2] = cos β cos α, m[0][1] = −sin γ cos β, m[1][1] = cos γ cos β.
    let elevation = m[(2, 1)].clamp(-1.0, 1.0).asin();
    if PI / 2.0 - elevation.abs() < 1e-7 {
        // Gimbal lock: the top row degenerates to [cos(γ±α), 0, sin(γ±α)].
        let azimuth = wrap_angle(m[(0, 2)].atan2(m[(0, 0)]));
        return EulerPose::new(azimuth, elevation.signum() * PI / 2.0, 0.0);
    }
    let azimuth = wrap_angle((-m[(2, 0)]).atan2(m[(2, 2)]));
    let roll = wrap_angle((-m[(0, 1)]).atan2(m[(1, 1)]));
    EulerPose::new(azimuth, elevation, roll)
}

/// A unit quaternion in Hamilton (w, x, y, z) order, normalized on
/// construction. Used for ingesting SfM pose storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    /// Normalizes the components. Fails if the norm is below 1e-6; callers
    /// that need a tighter sanity window (file parsers) check the raw norm
    /// before constructing.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, RotationError> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if norm < 1e-6 {
            return Err(RotationError::ZeroQuaternion { norm });
        }
        Ok(UnitQuaternion {
            w: w / norm,
            x: x / norm,
            y: y / norm,
            z: z / norm,
        })
    }

    pub fn wxyz(&self) -> (f64, f64, f64, f64) {
        (self.w, self.x, self.y, self.z)
    }
}

/// Standard Hamilton quaternion-to-matrix conversion.
pub fn quaternion_to_rotation(q: &UnitQuaternion) -> Rotation {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    Rotation(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Haar-uniform sample on SO(3) via a normalized 4-Gaussian quaternion.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Rotation {
    loop {
        let w: f64 = rng.sample(StandardNormal);
        let x: f64 = rng.sample(StandardNormal);
        let y: f64 = rng.sample(StandardNormal);
        let z: f64 = rng.sample(StandardNormal);
        if let Ok(q) = UnitQuaternion::new(w, x, y, z) {
            return quaternion_to_rotation(&q);
        }
    }
}

/// Small random perturbation: axis uniform on the sphere, angle drawn from
/// `|N(0, sigma²)|`.
pub fn small_random_rotation<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Rotation {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let axis = loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if v.norm() > 1e-9 {
            break v;
        }
    };
    let angle: f64 = rng.sample::<f64, _>(StandardNormal).abs() * sigma;
    Rotation::from_axis_angle(axis, angle)
}
