//! Shared geometric and image types.

use nalgebra::{Matrix2x3, Matrix3, Point2, Rotation3, UnitQuaternion, Vector3};
#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::prelude::*;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = Vector3<f64>;

/// Depth below which a point is treated as lying on the camera plane.
pub const MIN_DEPTH: f64 = 1e-9;

pub(crate) fn is_finite(p: &Point3) -> bool {
    p.x.is_finite() && p.y.is_finite() && p.z.is_finite()
}

/// Segment from a sensor (or camera) center to a measured point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Ray {
    pub origin: Point3,
    pub target: Point3,
}

impl Ray {
    pub fn new(origin: Point3, target: Point3) -> Result<Self> {
        if !is_finite(&origin) || !is_finite(&target) {
            return Err(Error::NonFinite);
        }
        if origin == target {
            return Err(Error::DegenerateRay);
        }
        Ok(Self { origin, target })
    }

    pub fn length(&self) -> f64 {
        (self.target - self.origin).norm()
    }

    /// Unit direction from origin to target.
    pub fn direction(&self) -> Vec3 {
        (self.target - self.origin).normalize()
    }
}

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub const TOLERANCE: f64 = 1e-9;

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vec3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Result<Self> {
        let t = Self { rotation, translation };
        t.validate()?;
        Ok(t)
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Matrix3::identity(), translation }
    }

    /// Rotation of `angle` radians about `axis`, followed by `translation`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, translation: Vec3) -> Self {
        let rotation = if axis.norm() == 0.0 || angle == 0.0 {
            Matrix3::identity()
        } else {
            *Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
        };
        Self { rotation, translation }
    }

    /// Rotation vector (axis scaled by angle) and translation.
    pub fn from_rotation_vector(omega: Vec3, translation: Vec3) -> Self {
        let rotation = *Rotation3::new(omega).matrix();
        Self { rotation, translation }
    }

    /// Twelve row-major values `[r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2]`.
    pub fn from_row_major(values: &[f64; 12]) -> Result<Self> {
        let rotation = Matrix3::new(
            values[0], values[1], values[2], values[4], values[5], values[6], values[8],
            values[9], values[10],
        );
        let translation = Vec3::new(values[3], values[7], values[11]);
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        // Text files carry a handful of digits; snap onto SO(3) before validating.
        let rotation = orthonormalize(&rotation);
        Self::new(rotation, translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let det = self.rotation.determinant();
        if (det - 1.0).abs() > Self::TOLERANCE {
            return Err(Error::InvalidTransform("rotation determinant is not 1"));
        }
        let gram = self.rotation * self.rotation.transpose() - Matrix3::identity();
        if gram.iter().any(|v| v.abs() > Self::TOLERANCE) {
            return Err(Error::InvalidTransform("rotation is not orthonormal"));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        c.acos()
    }

    /// Interpolates rotation (slerp) and translation (lerp) between two poses.
    pub fn interpolate(&self, other: &Self, s: f64) -> Self {
        let qa = UnitQuaternion::from_matrix(&self.rotation);
        let qb = UnitQuaternion::from_matrix(&other.rotation);
        let q = qa.slerp(&qb, s);
        Self {
            rotation: orthonormalize(q.to_rotation_matrix().matrix()),
            translation: self.translation * (1.0 - s) + other.translation * s,
        }
    }
}

/// Nearest rotation matrix (polar decomposition through SVD).
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}

/// Grayscale image with intensities in `[0, 1]`, row-major.
///
/// Pixel `(x, y)` has its center at the continuous coordinate `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self { width, height, data: vec![fill.clamp(0.0, 1.0); width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidImage("pixel count does not match dimensions"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::InvalidImage("intensity outside [0, 1]"));
        }
        Ok(Self { width, height, data })
    }

    /// 8-bit samples, scaled by 1/255.
    pub fn from_u8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        Self::from_vec(width, height, data.iter().map(|&v| f64::from(v) / 255.0).collect())
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value.clamp(0.0, 1.0);
    }

    /// Top-left tap of the bilinear stencil at `(u, v)`, if the stencil fits
    /// inside the image.
    #[inline]
    pub fn bilinear_taps(&self, u: f64, v: f64) -> Option<(usize, usize, f64, f64)> {
        if self.width < 2 || self.height < 2 {
            return None;
        }
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64)
        {
            return None;
        }
        let x0 = (u.floor() as usize).min(self.width - 2);
        let y0 = (v.floor() as usize).min(self.height - 2);
        Some((x0, y0, u - x0 as f64, v - y0 as f64))
    }

    pub fn bilinear(&self, u: f64, v: f64) -> Option<f64> {
        self.bilinear_with_gradient(u, v).map(|(value, _)| value)
    }

    /// Bilinear sample and its exact partial derivatives `[d/du, d/dv]`.
    pub fn bilinear_with_gradient(&self, u: f64, v: f64) -> Option<(f64, [f64; 2])> {
        let (x0, y0, fx, fy) = self.bilinear_taps(u, v)?;
        let i00 = self.get(x0, y0);
        let i10 = self.get(x0 + 1, y0);
        let i01 = self.get(x0, y0 + 1);
        let i11 = self.get(x0 + 1, y0 + 1);
        let top = i00 + (i10 - i00) * fx;
        let bottom = i01 + (i11 - i01) * fx;
        let value = top + (bottom - top) * fy;
        let du = (i10 - i00) * (1.0 - fy) + (i11 - i01) * fy;
        let dv = bottom - top;
        Some((value, [du, dv]))
    }
}

/// Per-pixel boolean mask; `true` marks a moving-object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidImage("mask size does not match dimensions"));
        }
        Ok(Self { width, height, bits })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Out-of-frame coordinates read as unset.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// A calibrated grayscale view: intrinsics, world-to-camera pose, image and
/// the moving-object mask.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct CameraView {
    pub intrinsics: Intrinsics,
    pub pose: RigidTransform,
    pub image: GrayImage,
    pub moving_mask: BinaryMask,
}

impl CameraView {
    pub fn new(
        intrinsics: Intrinsics,
        pose: RigidTransform,
        image: GrayImage,
        moving_mask: BinaryMask,
    ) -> Result<Self> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive"));
        }
        if !(cx >= 0.0 && cx < image.width() as f64 && cy >= 0.0 && cy < image.height() as f64) {
            return Err(Error::InvalidCamera("principal point outside the image"));
        }
        if moving_mask.width() != image.width() || moving_mask.height() != image.height() {
            return Err(Error::InvalidImage("mask and image dimensions differ"));
        }
        pose.validate()?;
        Ok(Self { intrinsics, pose, image, moving_mask })
    }

    /// View with an empty moving mask.
    pub fn unmasked(intrinsics: Intrinsics, pose: RigidTransform, image: GrayImage) -> Result<Self> {
        let mask = BinaryMask::new(image.width(), image.height());
        Self::new(intrinsics, pose, image, mask)
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        Point3::from(-(self.pose.rotation.transpose() * self.pose.translation))
    }

    pub fn to_camera(&self, p: &Point3) -> Point3 {
        self.pose.apply(p)
    }

    /// Pixel coordinate of `p`, or `None` when `p` is on or behind the
    /// camera plane.
    pub fn project(&self, p: &Point3) -> Option<Point2<f64>> {
        project_camera(&self.intrinsics, &self.to_camera(p))
    }

    /// Derivative of [`project`](Self::project) with respect to world
    /// coordinates.
    pub fn projection_jacobian(&self, p: &Point3) -> Result<Matrix2x3<f64>> {
        let c = self.to_camera(p);
        if c.z <= MIN_DEPTH {
            return Err(Error::DegenerateDepth { depth: c.z });
        }
        let Intrinsics { fx, fy, .. } = self.intrinsics;
        let iz = 1.0 / c.z;
        let camera_jacobian = Matrix2x3::new(
            fx * iz, 0.0, -fx * c.x * iz * iz,
            0.0, fy * iz, -fy * c.y * iz * iz,
        );
        Ok(camera_jacobian * self.pose.rotation)
    }

    /// Unit direction (world frame) of the ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vec3 {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        let d = Vec3::new((u - cx) / fx, (v - cy) / fy, 1.0);
        (self.pose.rotation.transpose() * d).normalize()
    }
}

pub(crate) fn project_camera(k: &Intrinsics, c: &Point3) -> Option<Point2<f64>> {
    if c.z <= 0.0 {
        return None;
    }
    Some(Point2::new(k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
}

/// A range measurement in the world frame together with the sensor
/// center it was observed from (its visibility ray) and its scan index.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScanPoint {
    pub position: Point3,
    pub sensor: Point3,
    pub scan: usize,
}

impl ScanPoint {
    pub fn ray(&self) -> Result<Ray> {
        Ray::new(self.sensor, self.position)
    }

    pub fn range(&self) -> f64 {
        (self.position - self.sensor).norm()
    }
}

/// A point on a mesh face with its barycentric coordinates and unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub face: usize,
    pub barycentric: [f64; 3],
    pub position: Point3,
    pub normal: Vec3,
}
