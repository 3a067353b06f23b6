//! COLMAP sparse-model parsing and per-video pose extraction.
//!
//! Reads `cameras.bin|txt` and `images.bin|txt` (little-endian layouts, 2D
//! point blocks skipped exactly) and turns the world-to-camera quaternions
//! into per-video ordered rotation lists. `points3D.*` is ignored.
//!
//! Because the object fills the masked reconstruction, the world-to-camera
//! rotation is the object's pose rotation up to the video's gauge, and a
//! change of SfM world frame multiplies every pose on the right.

use crate::rotations::{quaternion_to_rotation, relative_rotation, Rotation, UnitQuaternion};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ColmapError {
    #[error("file truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("declared count {count} exceeds the plausible bound 1e8")]
    BadCount { count: u64 },
    #[error("image {image_id}: quaternion norm {norm:.6} outside [0.999, 1.001]")]
    NonUnitQuaternion { image_id: i32, norm: f64 },
    #[error("line {line}: {reason}")]
    BadLine { line: usize, reason: String },
    #[error("unknown camera model {model}")]
    UnknownCameraModel { model: String },
    #[error("need at least 2 frames per video, got {got}")]
    TooFewFrames { got: usize },
    #[error("missing {name}.bin / {name}.txt in model directory")]
    MissingFile { name: &'static str },
    #[error("{file}: {source}")]
    InFile {
        file: String,
        #[source]
        source: Box<ColmapError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn in_file<T>(file: &str, result: Result<T, ColmapError>) -> Result<T, ColmapError> {
    result.map_err(|source| ColmapError::InFile {
        file: file.to_string(),
        source: Box::new(source),
    })
}

/// One image entry from a COLMAP model: world-to-camera pose plus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: i32,
    /// World-to-camera rotation (normalized on ingest).
    pub quat: UnitQuaternion,
    /// World-to-camera translation, scene units.
    pub translation: [f64; 3],
    pub camera_id: i32,
    pub name: String,
}

/// COLMAP camera models with their parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CameraModel {
    SimplePinhole,
    Pinhole,
    SimpleRadial,
    Radial,
    Opencv,
    OpencvFisheye,
    FullOpencv,
    Fov,
    SimpleRadialFisheye,
    RadialFisheye,
    ThinPrismFisheye,
}

impl CameraModel {
    const TABLE: [(CameraModel, i32, &'static str, usize); 11] = [
        (CameraModel::SimplePinhole, 0, "SIMPLE_PINHOLE", 3),
        (CameraModel::Pinhole, 1, "PINHOLE", 4),
        (CameraModel::SimpleRadial, 2, "SIMPLE_RADIAL", 4),
        (CameraModel::Radial, 3, "RADIAL", 5),
        (CameraModel::Opencv, 4, "OPENCV", 8),
        (CameraModel::OpencvFisheye, 5, "OPENCV_FISHEYE", 8),
        (CameraModel::FullOpencv, 6, "FULL_OPENCV", 12),
        (CameraModel::Fov, 7, "FOV", 5),
        (CameraModel::SimpleRadialFisheye, 8, "SIMPLE_RADIAL_FISHEYE", 4),
        (CameraModel::RadialFisheye, 9, "RADIAL_FISHEYE", 5),
        (CameraModel::ThinPrismFisheye, 10, "THIN_PRISM_FISHEYE", 12),
    ];

    pub fn from_id(id: i32) -> Option<Self> {
        Self::TABLE.iter().find(|row| row.1 == id).map(|row| row.0)
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::TABLE
            .iter()
            .find(|row| row.2 == name)
            .map(|row| row.0)
    }

    pub fn id(self) -> i32 {
        Self::TABLE.iter().find(|row| row.0 == self).unwrap().1
    }

    pub fn name(self) -> &'static str {
        Self::TABLE.iter().find(|row| row.0 == self).unwrap().2
    }

    pub fn param_count(self) -> usize {
        Self::TABLE.iter().find(|row| row.0 == self).unwrap().3
    }
}

/// Camera intrinsics. Carried through but unused by the pose math.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub model: CameraModel,
    pub width: u64,
    pub height: u64,
    pub params: Vec<f64>,
}

/// A parsed sparse model: camera table plus image records.
#[derive(Debug, Clone)]
pub struct SparseModel {
    pub cameras: BTreeMap<i32, Camera>,
    pub images: Vec<ImageRecord>,
}

/// One frame of a video: name, pose rotation, optional translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub name: String,
    pub rotation: Rotation,
    pub translation: Option<[f64; 3]>,
}

/// Ordered per-frame poses for one video, frames in canonical (natural
/// filename) order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VideoPoses {
    pub video_id: String,
    pub frames: Vec<Frame>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], ColmapError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let slice = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(ColmapError::Truncated {
                offset: self.pos,
                what,
            }),
        }
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, ColmapError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn i32(&mut self, what: &'static str) -> Result<i32, ColmapError> {
        Ok(i32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, ColmapError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// Reads a zero-terminated byte string (terminator consumed).
    fn cstring(&mut self, what: &'static str) -> Result<String, ColmapError> {
        let rest = &self.bytes[self.pos..];
        match rest.iter().position(|&b| b == 0) {
            Some(end) => {
                let s = String::from_utf8_lossy(&rest[..end]).into_owned();
                self.pos += end + 1;
                Ok(s)
            }
            None => Err(ColmapError::Truncated {
                offset: self.pos,
                what,
            }),
        }
    }
}

const MAX_COUNT: u64 = 100_000_000;

fn check_quat_norm(image_id: i32, w: f64, x: f64, y: f64, z: f64) -> Result<UnitQuaternion, ColmapError> {
    let norm = (w * w + x * x + y * y + z * z).sqrt();
    if !(0.999..=1.001).contains(&norm) {
        return Err(ColmapError::NonUnitQuaternion { image_id, norm });
    }
    UnitQuaternion::new(w, x, y, z)
        .map_err(|_| ColmapError::NonUnitQuaternion { image_id, norm })
}

/// Parses `images.bin`, returning the records and the number of bytes
/// consumed. Per-image 2D point blocks are skipped exactly; trailing bytes
/// past the declared image count are left unread.
pub fn parse_images_binary_prefix(
    bytes: &[u8],
) -> Result<(Vec<ImageRecord>, usize), ColmapError> {
    let mut r = Reader::new(bytes);
    let count = r.u64("image count")?;
    if count > MAX_COUNT {
        return Err(ColmapError::BadCount { count });
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let image_id = r.i32("image id")?;
        let qw = r.f64("quaternion")?;
        let qx = r.f64("quaternion")?;
        let qy = r.f64("quaternion")?;
        let qz = r.f64("quaternion")?;
        let tx = r.f64("translation")?;
        let ty = r.f64("translation")?;
        let tz = r.f64("translation")?;
        let camera_id = r.i32("camera id")?;
        let name = r.cstring("image name")?;
        let num_points = r.u64("2D point count")?;
        let block = num_points
            .checked_mul(24)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or(ColmapError::Truncated {
                offset: r.pos,
                what: "2D point block",
            })?;
        r.take(block, "2D point block")?;
        records.push(ImageRecord {
            image_id,
            quat: check_quat_norm(image_id, qw, qx, qy, qz)?,
            translation: [tx, ty, tz],
            camera_id,
            name,
        });
    }
    Ok((records, r.pos))
}

/// Parses `images.bin` (see [`parse_images_binary_prefix`]).
pub fn parse_images_binary(bytes: &[u8]) -> Result<Vec<ImageRecord>, ColmapError> {
    parse_images_binary_prefix(bytes).map(|(records, _)| records)
}

/// Parses `images.txt`: `IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME`
/// lines alternating with (possibly empty) 2D-point lines. `#` comment
/// lines are ignored; blank lines are skipped where an image line is
/// expected.
pub fn parse_images_text(text: &str) -> Result<Vec<ImageRecord>, ColmapError> {
    let mut records = Vec::new();
    let mut expect_points = false;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        if expect_points {
            // The 2D point payload is skipped, not validated.
            expect_points = false;
            continue;
        }
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 10 {
            return Err(ColmapError::BadLine {
                line: lineno,
                reason: format!("expected 10 fields, got {}", fields.len()),
            });
        }
        let num = |i: usize, what: &str| -> Result<f64, ColmapError> {
            fields[i].parse::<f64>().map_err(|_| ColmapError::BadLine {
                line: lineno,
                reason: format!("bad {what} '{}'", fields[i]),
            })
        };
        let image_id = fields[0].parse::<i32>().map_err(|_| ColmapError::BadLine {
            line: lineno,
            reason: format!("bad image id '{}'", fields[0]),
        })?;
        let camera_id = fields[8].parse::<i32>().map_err(|_| ColmapError::BadLine {
            line: lineno,
            reason: format!("bad camera id '{}'", fields[8]),
        })?;
        let quat = check_quat_norm(
            image_id,
            num(1, "QW")?,
            num(2, "QX")?,
            num(3, "QY")?,
            num(4, "QZ")?,
        )?;
        records.push(ImageRecord {
            image_id,
            quat,
            translation: [num(5, "TX")?, num(6, "TY")?, num(7, "TZ")?],
            camera_id,
            name: fields[9..].join(" "),
        });
        expect_points = true;
    }
    Ok(records)
}

/// Parses `cameras.bin`, returning the camera table and bytes consumed.
pub fn parse_cameras_binary_prefix(
    bytes: &[u8],
) -> Result<(BTreeMap<i32, Camera>, usize), ColmapError> {
    let mut r = Reader::new(bytes);
    let count = r.u64("camera count")?;
    if count > MAX_COUNT {
        return Err(ColmapError::BadCount { count });
    }
    let mut cameras = BTreeMap::new();
    for _ in 0..count {
        let camera_id = r.i32("camera id")?;
        let model_id = r.i32("camera model id")?;
        let model = CameraModel::from_id(model_id).ok_or(ColmapError::UnknownCameraModel {
            model: model_id.to_string(),
        })?;
        let width = r.u64("camera width")?;
        let height = r.u64("camera height")?;
        let mut params = Vec::with_capacity(model.param_count());
        for _ in 0..model.param_count() {
            params.push(r.f64("camera params")?);
        }
        cameras.insert(
            camera_id,
            Camera {
                model,
                width,
                height,
                params,
            },
        );
    }
    Ok((cameras, r.pos))
}

/// Parses `cameras.bin` (see [`parse_cameras_binary_prefix`]).
pub fn parse_cameras_binary(bytes: &[u8]) -> Result<BTreeMap<i32, Camera>, ColmapError> {
    parse_cameras_binary_prefix(bytes).map(|(cameras, _)| cameras)
}

/// Parses `cameras.txt`: `CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]` lines.
pub fn parse_cameras_text(text: &str) -> Result<BTreeMap<i32, Camera>, ColmapError> {
    let mut cameras = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() < 4 {
            return Err(ColmapError::BadLine {
                line: lineno,
                reason: format!("expected at least 4 fields, got {}", fields.len()),
            });
        }
        let camera_id = fields[0].parse::<i32>().map_err(|_| ColmapError::BadLine {
            line: lineno,
            reason: format!("bad camera id '{}'", fields[0]),
        })?;
        let model = CameraModel::from_name(fields[1]).ok_or(ColmapError::UnknownCameraModel {
            model: fields[1].to_string(),
        })?;
        if fields.len() != 4 + model.param_count() {
            return Err(ColmapError::BadLine {
                line: lineno,
                reason: format!(
                    "{} expects {} params, got {}",
                    model.name(),
                    model.param_count(),
                    fields.len() - 4
                ),
            });
        }
        let dim = |i: usize| -> Result<u64, ColmapError> {
            fields[i].parse::<u64>().map_err(|_| ColmapError::BadLine {
                line: lineno,
                reason: format!("bad dimension '{}'", fields[i]),
            })
        };
        let mut params = Vec::with_capacity(model.param_count());
        for f in &fields[4..] {
            params.push(f.parse::<f64>().map_err(|_| ColmapError::BadLine {
                line: lineno,
                reason: format!("bad parameter '{f}'"),
            })?);
        }
        cameras.insert(
            camera_id,
            Camera {
                model,
                width: dim(2)?,
                height: dim(3)?,
                params,
            },
        );
    }
    Ok(cameras)
}

/// Loads a sparse model directory, preferring binary files over text.
/// Parse failures name the offending file.
pub fn load_sparse_model(dir: &Path) -> Result<SparseModel, ColmapError> {
    let cameras = if dir.join("cameras.bin").is_file() {
        in_file(
            "cameras.bin",
            parse_cameras_binary(&std::fs::read(dir.join("cameras.bin"))?),
        )?
    } else if dir.join("cameras.txt").is_file() {
        in_file(
            "cameras.txt",
            parse_cameras_text(&std::fs::read_to_string(dir.join("cameras.txt"))?),
        )?
    } else {
        return Err(ColmapError::MissingFile { name: "cameras" });
    };
    let images = if dir.join("images.bin").is_file() {
        in_file(
            "images.bin",
            parse_images_binary(&std::fs::read(dir.join("images.bin"))?),
        )?
    } else if dir.join("images.txt").is_file() {
        in_file(
            "images.txt",
            parse_images_text(&std::fs::read_to_string(dir.join("images.txt"))?),
        )?
    } else {
        return Err(ColmapError::MissingFile { name: "images" });
    };
    Ok(SparseModel { cameras, images })
}

/// Compares filenames treating digit runs numerically ("frame_2" before
/// "frame_10"). Runs that differ only in leading zeros compare equal here;
/// callers break the tie lexicographically.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    let ab = a.as_bytes();
    let bb = b.as_bytes();
    let (mut i, mut j) = (0usize, 0usize);
    while i < ab.len() && j < bb.len() {
        if ab[i].is_ascii_digit() && bb[j].is_ascii_digit() {
            let si = i;
            while i < ab.len() && ab[i].is_ascii_digit() {
                i += 1;
            }
            let sj = j;
            while j < bb.len() && bb[j].is_ascii_digit() {
                j += 1;
            }
            let ra = a[si..i].trim_start_matches('0');
            let rb = b[sj..j].trim_start_matches('0');
            let ord = ra.len().cmp(&rb.len()).then_with(|| ra.cmp(rb));
            if ord != Ordering::Equal {
                return ord;
            }
        } else {
            let ord = ab[i].cmp(&bb[j]);
            if ord != Ordering::Equal {
                return ord;
            }
            i += 1;
            j += 1;
        }
    }
    (ab.len() - i).cmp(&(bb.len() - j))
}

/// Orders records by natural filename sort (ties broken lexicographically,
/// then by image id) and converts quaternions to pose rotations.
pub fn extract_video_poses(
    records: &[ImageRecord],
    video_id: &str,
) -> Result<VideoPoses, ColmapError> {
    if records.len() < 2 {
        return Err(ColmapError::TooFewFrames {
            got: records.len(),
        });
    }
    let mut ordered: Vec<&ImageRecord> = records.iter().collect();
    ordered.sort_by(|x, y| {
        natural_cmp(&x.name, &y.name)
            .then_with(|| x.name.cmp(&y.name))
            .then_with(|| x.image_id.cmp(&y.image_id))
    });
    let frames = ordered
        .into_iter()
        .map(|rec| Frame {
            name: rec.name.clone(),
            rotation: quaternion_to_rotation(&rec.quat),
            translation: Some(rec.translation),
        })
        .collect();
    Ok(VideoPoses {
        video_id: video_id.to_string(),
        frames,
    })
}

/// Right-multiplies every frame by the first frame's inverse rotation
/// (`R_i ← R_i R_1ᵀ`), making the first frame the identity. All pairwise
/// relative rotations are unchanged; idempotent.
pub fn rebase_to_first_frame(v: &VideoPoses) -> VideoPoses {
    let Some(first) = v.frames.first() else {
        return v.clone();
    };
    let inv = first.rotation.transpose();
    VideoPoses {
        video_id: v.video_id.clone(),
        frames: v
            .frames
            .iter()
            .map(|f| Frame {
                name: f.name.clone(),
                rotation: &f.rotation * &inv,
                translation: f.translation,
            })
            .collect(),
    }
}

/// Mean adjacent-frame rotation angle, a quick sanity signal for ingest.
pub fn mean_adjacent_angle(v: &VideoPoses) -> f64 {
    if v.frames.len() < 2 {
        return 0.0;
    }
    let total: f64 = v
        .frames
        .windows(2)
        .map(|w| {
            crate::rotations::geodesic_distance(
                &relative_rotation(&w[0].rotation, &w[1].rotation),
                &Rotation::identity(),
            )
        })
        .sum();
    total / (v.frames.len() - 1) as f64
}

/// Serializers for COLMAP model files, used to build test fixtures and
/// synthetic models that round-trip through the parsers.
pub mod writer {
    use super::*;

    /// A 2D observation attached to an image record.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct Point2d {
        pub x: f64,
        pub y: f64,
        pub point3d_id: i64,
    }

    pub fn images_binary(entries: &[(ImageRecord, Vec<Point2d>)]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (rec, points) in entries {
            out.extend_from_slice(&rec.image_id.to_le_bytes());
            let (w, x, y, z) = rec.quat.wxyz();
            for v in [w, x, y, z] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in rec.translation {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&rec.camera_id.to_le_bytes());
            out.extend_from_slice(rec.name.as_bytes());
            out.push(0);
            out.extend_from_slice(&(points.len() as u64).to_le_bytes());
            for p in points {
                out.extend_from_slice(&p.x.to_le_bytes());
                out.extend_from_slice(&p.y.to_le_bytes());
                out.extend_from_slice(&p.point3d_id.to_le_bytes());
            }
        }
        out
    }

    pub fn images_text(entries: &[(ImageRecord, Vec<Point2d>)]) -> String {
        let mut out = String::from("# Image list\n");
        for (rec, points) in entries {
            let (w, x, y, z) = rec.quat.wxyz();
            let [tx, ty, tz] = rec.translation;
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {} {} {}\n",
                rec.image_id, w, x, y, z, tx, ty, tz, rec.camera_id, rec.name
            ));
            let mut line = String::new();
            for (i, p) in points.iter().enumerate() {
                if i > 0 {
                    line.push(' ');
                }
                line.push_str(&format!("{} {} {}", p.x, p.y, p.point3d_id));
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    pub fn cameras_binary(cameras: &BTreeMap<i32, Camera>) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(cameras.len() as u64).to_le_bytes());
        for (id, cam) in cameras {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&cam.model.id().to_le_bytes());
            out.extend_from_slice(&cam.width.to_le_bytes());
            out.extend_from_slice(&cam.height.to_le_bytes());
            for p in &cam.params {
                out.extend_from_slice(&p.to_le_bytes());
            }
        }
        out
    }

    pub fn cameras_text(cameras: &BTreeMap<i32, Camera>) -> String {
        let mut out = String::from("# Camera list\n");
        for (id, cam) in cameras {
            out.push_str(&format!(
                "{} {} {} {}",
                id,
                cam.model.name(),
                cam.width,
                cam.height
            ));
            for p in &cam.params {
                out.push_str(&format!(" {p}"));
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::writer::Point2d;
    use super::*;
    use crate::rotations::{geodesic_distance, random_rotation, rotation_to_sixd};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_record(id: i32, name: &str) -> ImageRecord {
        ImageRecord {
            image_id: id,
            quat: UnitQuaternion::new(1.0, 0.0, 0.0, 0.0).unwrap(),
            translation: [0.0, 0.0, 0.0],
            camera_id: 1,
            name: name.to_string(),
        }
    }

    fn random_record(id: i32, name: &str, rng: &mut ChaCha8Rng) -> ImageRecord {
        // Build a quaternion by round-tripping a random rotation through
        // its 6D embedding is overkill; sample one directly.
        use rand::Rng;
        use rand_distr::StandardNormal;
        let q = UnitQuaternion::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        )
        .unwrap();
        ImageRecord {
            image_id: id,
            quat: q,
            translation: [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ],
            camera_id: 1,
            name: name.to_string(),
        }
    }

    #[test]
    fn binary_fixture_with_identity_quaternions() {
        let entries = vec![
            (identity_record(1, "frame_0001.png"), vec![]),
            (identity_record(2, "frame_0002.png"), vec![]),
        ];
        let records = parse_images_binary(&writer::images_binary(&entries)).unwrap();
        assert_eq!(records.len(), 2);
        for rec in &records {
            let r = quaternion_to_rotation(&rec.quat);
            assert!(geodesic_distance(&r, &Rotation::identity()) < 1e-12);
        }
    }

    #[test]
    fn binary_and_text_parsers_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let entries: Vec<(ImageRecord, Vec<Point2d>)> = (0..5)
            .map(|i| {
                let points = (0..i)
                    .map(|j| Point2d {
                        x: j as f64 * 1.5,
                        y: -(j as f64),
                        point3d_id: j as i64 - 1,
                    })
                    .collect();
                (
                    random_record(i + 1, &format!("frame_{i:04}.png"), &mut rng),
                    points,
                )
            })
            .collect();
        let from_bin = parse_images_binary(&writer::images_binary(&entries)).unwrap();
        let from_txt = parse_images_text(&writer::images_text(&entries)).unwrap();
        assert_eq!(from_bin.len(), from_txt.len());
        for (a, b) in from_bin.iter().zip(&from_txt) {
            assert_eq!(a.image_id, b.image_id);
            assert_eq!(a.camera_id, b.camera_id);
            assert_eq!(a.name, b.name);
            assert_eq!(a.translation, b.translation);
            let ra = quaternion_to_rotation(&a.quat);
            let rb = quaternion_to_rotation(&b.quat);
            for (x, y) in ra.to_row_major().iter().zip(rb.to_row_major()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncated_file_reports_offset() {
        let entries = vec![
            (identity_record(1, "a.png"), vec![]),
            (identity_record(2, "b.png"), vec![]),
        ];
        let bytes = writer::images_binary(&entries);
        // Cut inside the second image's quaternion.
        let record1_len = 4 + 32 + 24 + 4 + "a.png".len() + 1 + 8;
        let cut = 8 + record1_len + 4 + 16;
        let err = parse_images_binary(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, ColmapError::Truncated { .. }));
    }

    #[test]
    fn sentinel_bytes_after_declared_records_stay_unread() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let points = vec![
            Point2d {
                x: 1.0,
                y: 2.0,
                point3d_id: -1,
            },
            Point2d {
                x: 3.5,
                y: -0.25,
                point3d_id: 42,
            },
        ];
        let entries = vec![
            (random_record(1, "x_1.png", &mut rng), points),
            (random_record(2, "x_2.png", &mut rng), vec![]),
        ];
        let clean = writer::images_binary(&entries);
        let mut with_sentinel = clean.clone();
        with_sentinel.extend_from_slice(&[0xDE, 0xAD, 0xBE, 0xEF, 0x01]);

        let (records, consumed) = parse_images_binary_prefix(&with_sentinel).unwrap();
        assert_eq!(consumed, clean.len(), "parser must stop at the sentinel");
        let baseline = parse_images_binary(&clean).unwrap();
        assert_eq!(records, baseline);
    }

    #[test]
    fn bad_count_rejected() {
        let bytes = (MAX_COUNT + 1).to_le_bytes();
        assert!(matches!(
            parse_images_binary(&bytes),
            Err(ColmapError::BadCount { .. })
        ));
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let mut rec = identity_record(1, "a.png");
        rec.quat = UnitQuaternion::new(2.0, 0.0, 0.0, 0.0).unwrap();
        // The writer emits the normalized quaternion, so corrupt the bytes
        // directly: QW sits 12 bytes into the file.
        let mut bytes = writer::images_binary(&[(rec, vec![])]);
        bytes[12..20].copy_from_slice(&2.0f64.to_le_bytes());
        assert!(matches!(
            parse_images_binary(&bytes),
            Err(ColmapError::NonUnitQuaternion { image_id: 1, .. })
        ));
    }

    #[test]
    fn text_header_and_single_image() {
        let text = "# images.txt\n# more header\n1 1 0 0 0 0 0 0 1 frame_0001.png\n\n";
        let records = parse_images_text(text).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].name, "frame_0001.png");
        let r = quaternion_to_rotation(&records[0].quat);
        assert!(geodesic_distance(&r, &Rotation::identity()) < 1e-12);
    }

    #[test]
    fn text_bad_field_count_reports_line() {
        let text = "# header\n1 1 0 0 0 0 0 1 name.png\n";
        match parse_images_text(text).unwrap_err() {
            ColmapError::BadLine { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn text_non_unit_quaternion() {
        let text = "1 2 0 0 0 0 0 0 1 a.png\n\n";
        assert!(matches!(
            parse_images_text(text),
            Err(ColmapError::NonUnitQuaternion { .. })
        ));
    }

    #[test]
    fn cameras_simple_pinhole() {
        let mut cams = BTreeMap::new();
        cams.insert(
            1,
            Camera {
                model: CameraModel::SimplePinhole,
                width: 640,
                height: 480,
                params: vec![500.0, 320.0, 240.0],
            },
        );
        let parsed = parse_cameras_binary(&writer::cameras_binary(&cams)).unwrap();
        assert_eq!(parsed[&1].params.len(), 3);
        assert_eq!(parsed, cams);
    }

    #[test]
    fn cameras_unknown_model() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&7i32.to_le_bytes());
        bytes.extend_from_slice(&99i32.to_le_bytes());
        assert!(matches!(
            parse_cameras_binary(&bytes),
            Err(ColmapError::UnknownCameraModel { .. })
        ));
    }

    #[test]
    fn cameras_text_binary_parity() {
        let mut cams = BTreeMap::new();
        cams.insert(
            3,
            Camera {
                model: CameraModel::Opencv,
                width: 1920,
                height: 1080,
                params: vec![1000.0, 1001.5, 960.0, 540.0, 0.01, -0.02, 0.001, 0.0],
            },
        );
        cams.insert(
            7,
            Camera {
                model: CameraModel::Radial,
                width: 100,
                height: 100,
                params: vec![90.0, 50.0, 50.0, 0.1, 0.2],
            },
        );
        let from_bin = parse_cameras_binary(&writer::cameras_binary(&cams)).unwrap();
        let from_txt = parse_cameras_text(&writer::cameras_text(&cams)).unwrap();
        assert_eq!(from_bin, from_txt);
        assert_eq!(from_bin, cams);
    }

    #[test]
    fn natural_sort_orders_digit_runs_numerically() {
        let records = vec![
            identity_record(1, "frame_10.png"),
            identity_record(2, "frame_2.png"),
        ];
        let poses = extract_video_poses(&records, "v").unwrap();
        assert_eq!(poses.frames[0].name, "frame_2.png");
        assert_eq!(poses.frames[1].name, "frame_10.png");

        // Numeric ties fall back to full lexicographic order.
        assert_eq!(natural_cmp("frame_02", "frame_2"), Ordering::Equal);
        let records = vec![
            identity_record(1, "frame_2.png"),
            identity_record(2, "frame_02.png"),
        ];
        let poses = extract_video_poses(&records, "v").unwrap();
        assert_eq!(poses.frames[0].name, "frame_02.png");
    }

    #[test]
    fn too_few_frames() {
        let records = vec![identity_record(1, "only.png")];
        assert!(matches!(
            extract_video_poses(&records, "v"),
            Err(ColmapError::TooFewFrames { got: 1 })
        ));
    }

    #[test]
    fn known_rotations_survive_writer_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rotations: Vec<Rotation> = (0..6).map(|_| random_rotation(&mut rng)).collect();
        let entries: Vec<(ImageRecord, Vec<Point2d>)> = rotations
            .iter()
            .enumerate()
            .map(|(i, r)| {
                // Rotation → quaternion via the standard trace method is not
                // exposed; reuse the 6D embedding for an exact copy instead.
                let v = rotation_to_sixd(r);
                let m = crate::rotations::sixd_to_rotation(&v).unwrap();
                let q = matrix_to_quat(&m);
                (
                    ImageRecord {
                        image_id: i as i32,
                        quat: q,
                        translation: [0.0; 3],
                        camera_id: 1,
                        name: format!("f_{i:03}.png"),
                    },
                    vec![],
                )
            })
            .collect();
        let parsed = parse_images_binary(&writer::images_binary(&entries)).unwrap();
        let poses = extract_video_poses(&parsed, "v").unwrap();
        for (frame, want) in poses.frames.iter().zip(&rotations) {
            let diff = (frame.rotation.matrix() - want.matrix()).norm();
            assert!(diff < 1e-12, "pose deviation {diff:.3e}");
        }
    }

    /// Shepperd-style rotation-to-quaternion conversion for test fixtures.
    fn matrix_to_quat(r: &Rotation) -> UnitQuaternion {
        let m = r.matrix();
        let t = m.trace();
        let (w, x, y, z);
        if t > 0.0 {
            let s = (t + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        UnitQuaternion::new(w, x, y, z).unwrap()
    }

    #[test]
    fn rebase_makes_first_frame_identity_and_preserves_relatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let frames: Vec<Frame> = (0..5)
            .map(|i| Frame {
                name: format!("f{i}"),
                rotation: random_rotation(&mut rng),
                translation: None,
            })
            .collect();
        let v = VideoPoses {
            video_id: "v".into(),
            frames,
        };
        let rebased = rebase_to_first_frame(&v);
        assert!(
            (rebased.frames[0].rotation.matrix() - Rotation::identity().matrix()).norm() < 1e-12
        );
        for i in 0..v.frames.len() {
            for j in 0..v.frames.len() {
                let before = relative_rotation(&v.frames[i].rotation, &v.frames[j].rotation);
                let after =
                    relative_rotation(&rebased.frames[i].rotation, &rebased.frames[j].rotation);
                assert!((before.matrix() - after.matrix()).norm() < 1e-12);
            }
        }
        // Idempotent.
        let twice = rebase_to_first_frame(&rebased);
        for (a, b) in rebased.frames.iter().zip(&twice.frames) {
            assert!((a.rotation.matrix() - b.rotation.matrix()).norm() < 1e-12);
        }
    }

    #[test]
    fn video_poses_json_shape() {
        let v = VideoPoses {
            video_id: "vid".into(),
            frames: vec![Frame {
                name: "f0".into(),
                rotation: Rotation::identity(),
                translation: None,
            }],
        };
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["video_id"], "vid");
        assert_eq!(json["frames"][0]["rotation"].as_array().unwrap().len(), 9);
        assert!(json["frames"][0]["translation"].is_null());
        let back: VideoPoses = serde_json::from_value(json).unwrap();
        assert_eq!(back.frames[0].name, "f0");
    }
}
