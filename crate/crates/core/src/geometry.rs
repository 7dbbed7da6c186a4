//! Rigid-body transforms, pinhole projection, and depth-image rasters.
//!
//! Conventions used throughout the crate:
//!
//! * Camera frame: +z forward (optical axis), +x right, +y down, so image
//!   rows increase downward.
//! * World frame: axes aligned with the reference camera at identity pose,
//!   which makes "up" the −y direction. Heights above the ground plane are
//!   therefore `-y` in world coordinates.
//! * Pixel assignment rounds to the nearest integer center, ties at .5
//!   rounding half-up (toward +∞).

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the orthonormality check on rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("rotation matrix is not orthonormal with determinant +1 (max deviation {0:.3e})")]
    InvalidRotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("point cloud attribute `{name}` has length {got}, expected {expected}")]
    AttributeLength {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("non-finite coordinate in point cloud")]
    NonFinitePoint,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("depth image {what} must be {requirement}, got {got}")]
    InvalidDepthValue {
        what: &'static str,
        requirement: &'static str,
        got: f64,
    },
    #[error("image size {got_w}x{got_h} is not an integer multiple of target {target_w}x{target_h}")]
    NonIntegerScale {
        got_w: usize,
        got_h: usize,
        target_w: usize,
        target_h: usize,
    },
    #[error("crop of {crop} rows exceeds resized height {height}")]
    CropTooLarge { crop: usize, height: usize },
    #[error("buffer length {got} does not match {width}x{height}")]
    BufferSize {
        got: usize,
        width: usize,
        height: usize,
    },
}

/// A rigid transform: `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl SE3Pose {
    /// Builds a pose, validating that `rotation` is orthonormal with
    /// determinant +1 within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((gram[(i, j)] - target).abs());
            }
        }
        dev = dev.max((rotation.determinant() - 1.0).abs());
        if dev > ROTATION_TOL || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidRotation(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, y, z),
        }
    }

    /// Rotation about the x axis by `angle` radians.
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the y axis by `angle` radians.
    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c),
            translation: Vector3::zeros(),
        }
    }

    /// Rotation about the z axis by `angle` radians.
    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            rotation: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Composition `self ∘ other`: `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &SE3Pose) -> SE3Pose {
        SE3Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> SE3Pose {
        let rot_t = self.rotation.transpose();
        SE3Pose {
            rotation: rot_t,
            translation: -(rot_t * self.translation),
        }
    }

    /// Applies the transform to a single point.
    pub fn apply(&self, point: Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }
}

/// Pinhole camera parameters. `cx`/`cy` are the principal point in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !(0.0..(width as f64)).contains(&cx) || !(0.0..(height as f64)).contains(&cy) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }
}

/// A set of 3D points with optional per-point attributes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// Radial velocity toward the sensor, m/s.
    pub range_rate: Option<Vec<f64>>,
    pub intensity: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        let cloud = Self {
            points,
            range_rate: None,
            intensity: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_attributes(
        points: Vec<Vector3<f64>>,
        range_rate: Option<Vec<f64>>,
        intensity: Option<Vec<f64>>,
    ) -> Result<Self, GeometryError> {
        let cloud = Self {
            points,
            range_rate,
            intensity,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    fn validate(&self) -> Result<(), GeometryError> {
        if !self
            .points
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
        {
            return Err(GeometryError::NonFinitePoint);
        }
        let n = self.points.len();
        if let Some(rr) = &self.range_rate {
            if rr.len() != n {
                return Err(GeometryError::AttributeLength {
                    name: "range_rate",
                    got: rr.len(),
                    expected: n,
                });
            }
        }
        if let Some(it) = &self.intensity {
            if it.len() != n {
                return Err(GeometryError::AttributeLength {
                    name: "intensity",
                    got: it.len(),
                    expected: n,
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-pixel depth in meters; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SparseDepthImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSize {
                got: data.len(),
                width,
                height,
            });
        }
        for &v in &data {
            if v < 0.0 || !v.is_finite() {
                return Err(GeometryError::InvalidDepthValue {
                    what: "sparse value",
                    requirement: "finite and >= 0",
                    got: v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Sets a pixel. `depth` 0 clears it.
    pub fn set(&mut self, u: usize, v: usize, depth: f64) {
        self.data[v * self.width + u] = depth;
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.get(u, v) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.0).count()
    }

    /// Iterates `(u, v, depth)` over valid pixels in row-major order.
    pub fn iter_valid(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &d)| d > 0.0)
            .map(move |(i, &d)| (i % w, i / w, d))
    }
}

/// Per-pixel depth in meters with every pixel valid (> 0).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseDepthImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DenseDepthImage {
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSize {
                got: data.len(),
                width,
                height,
            });
        }
        for &v in &data {
            if v <= 0.0 || !v.is_finite() {
                return Err(GeometryError::InvalidDepthValue {
                    what: "dense value",
                    requirement: "finite and > 0",
                    got: v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self, GeometryError> {
        Self::from_data(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    /// Reinterprets as a sparse map (every pixel valid since all depths > 0).
    pub fn as_sparse(&self) -> SparseDepthImage {
        SparseDepthImage {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }
}

/// Grayscale intensity raster with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != width * height {
            return Err(GeometryError::BufferSize {
                got: data.len(),
                width,
                height,
            });
        }
        for &v in &data {
            if !(0.0..=1.0).contains(&v) {
                return Err(GeometryError::InvalidDepthValue {
                    what: "intensity",
                    requirement: "within [0, 1]",
                    got: v,
                });
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self, GeometryError> {
        Self::from_data(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }
}

/// Applies `pose` to every point; attributes are carried unchanged.
pub fn transform_points(pose: &SE3Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|&p| pose.apply(p)).collect(),
        range_rate: cloud.range_rate.clone(),
        intensity: cloud.intensity.clone(),
    }
}

/// Rounds to the nearest integer, ties at .5 going up (toward +∞).
#[inline]
pub(crate) fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Rasterizes camera-frame points into a sparse depth image.
///
/// Points with z ≤ 0 or landing outside the image are dropped. When several
/// points hit one pixel the smallest depth wins.
pub fn project_to_depth(cloud_cam: &PointCloud, k: &CameraIntrinsics) -> SparseDepthImage {
    let mut img = SparseDepthImage::empty(k.width, k.height);
    for p in &cloud_cam.points {
        let z = p.z;
        if z <= 0.0 {
            continue;
        }
        let u = round_half_up(k.fx * p.x / z + k.cx);
        let v = round_half_up(k.fy * p.y / z + k.cy);
        if u < 0.0 || v < 0.0 || u >= k.width as f64 || v >= k.height as f64 {
            continue;
        }
        let (u, v) = (u as usize, v as usize);
        let cur = img.get(u, v);
        if cur == 0.0 || z < cur {
            img.set(u, v, z);
        }
    }
    img
}

/// Inverse of the pinhole projection for a single pixel at depth `d`.
pub fn backproject(
    u: f64,
    v: f64,
    d: f64,
    k: &CameraIntrinsics,
) -> Result<Vector3<f64>, GeometryError> {
    if d <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(d));
    }
    Ok(Vector3::new(
        (u - k.cx) * d / k.fx,
        (v - k.cy) * d / k.fy,
        d,
    ))
}

fn resize_factors(
    width: usize,
    height: usize,
    target_w: usize,
    target_h: usize,
    crop_top_rows: usize,
) -> Result<(usize, usize), GeometryError> {
    if target_w == 0
        || target_h == 0
        || width % target_w != 0
        || height % target_h != 0
    {
        return Err(GeometryError::NonIntegerScale {
            got_w: width,
            got_h: height,
            target_w,
            target_h,
        });
    }
    if crop_top_rows >= target_h {
        return Err(GeometryError::CropTooLarge {
            crop: crop_top_rows,
            height: target_h,
        });
    }
    Ok((width / target_w, height / target_h))
}

/// Nearest-neighbor downsample to `target_w`×`target_h`, then removal of the
/// top `crop_top_rows` rows. Sparse maps keep the valid sample nearest to the
/// cell center, ties going to the smallest depth.
pub fn resize_crop_sparse(
    img: &SparseDepthImage,
    target_w: usize,
    target_h: usize,
    crop_top_rows: usize,
) -> Result<SparseDepthImage, GeometryError> {
    let (sx, sy) = resize_factors(img.width, img.height, target_w, target_h, crop_top_rows)?;
    let out_h = target_h - crop_top_rows;
    let mut out = SparseDepthImage::empty(target_w, out_h);
    for ov in 0..out_h {
        let cell_v = ov + crop_top_rows;
        for ou in 0..target_w {
            // Center of the source cell, in source pixel coordinates.
            let center_u = (ou * sx) as f64 + (sx as f64 - 1.0) / 2.0;
            let center_v = (cell_v * sy) as f64 + (sy as f64 - 1.0) / 2.0;
            let mut best: Option<(f64, f64)> = None; // (dist2, depth)
            for dv in 0..sy {
                for du in 0..sx {
                    let su = ou * sx + du;
                    let sv = cell_v * sy + dv;
                    let d = img.get(su, sv);
                    if d <= 0.0 {
                        continue;
                    }
                    let dist2 =
                        (su as f64 - center_u).powi(2) + (sv as f64 - center_v).powi(2);
                    let better = match best {
                        None => true,
                        Some((bd2, bdep)) => {
                            dist2 < bd2 || (dist2 == bd2 && d < bdep)
                        }
                    };
                    if better {
                        best = Some((dist2, d));
                    }
                }
            }
            if let Some((_, depth)) = best {
                out.set(ou, ov, depth);
            }
        }
    }
    Ok(out)
}

/// Dense counterpart of [`resize_crop_sparse`]; every cell is populated.
pub fn resize_crop_dense(
    img: &DenseDepthImage,
    target_w: usize,
    target_h: usize,
    crop_top_rows: usize,
) -> Result<DenseDepthImage, GeometryError> {
    let sparse = SparseDepthImage {
        width: img.width,
        height: img.height,
        data: img.data.clone(),
    };
    let resized = resize_crop_sparse(&sparse, target_w, target_h, crop_top_rows)?;
    DenseDepthImage::from_data(resized.width, resized.height, resized.data)
}
