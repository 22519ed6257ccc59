//! Rigid-body poses, the pinhole camera model, and projection primitives.
//!
//! Conventions used throughout the crate:
//! - distances are millimeters, angles radians unless stated otherwise;
//! - pixel `x` is the column (image x-axis), pixel `y` the row, with the
//!   origin at the top-left pixel center;
//! - camera frames are right-handed with +z along the optical axis.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector6};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("depth must be positive (got {0})")]
    NonPositiveDepth(f64),
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("matrix is not a rotation (|R^T R - I| = {0:.3e})")]
    NotARotation(f64),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("degenerate point configuration: {0}")]
    DegeneratePoints(String),
}

/// A fractional pixel position; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Pixel {
    pub x: f64,
    pub y: f64,
}

impl Pixel {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// An SE(3) rigid transform. Rotation is kept as a unit quaternion and
/// renormalized after composition so long pose chains do not drift off
/// the manifold; the equivalent matrix is cached for point transforms.
#[derive(Debug, Clone, Copy)]
pub struct RigidPose {
    rotation: UnitQuaternion<f64>,
    matrix: Matrix3<f64>,
    translation: Vec3,
}

impl PartialEq for RigidPose {
    fn eq(&self, other: &Self) -> bool {
        self.rotation == other.rotation && self.translation == other.translation
    }
}

impl Default for RigidPose {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidPose {
    pub fn identity() -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vec3::zeros())
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            matrix: rotation.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::from_parts(UnitQuaternion::identity(), Vec3::new(x, y, z))
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let axis = nalgebra::Unit::new_normalize(*axis);
        Self::from_parts(UnitQuaternion::from_axis_angle(&axis, angle), Vec3::zeros())
    }

    /// Builds a pose from an explicit rotation matrix, rejecting matrices
    /// that are not orthonormal with determinant +1.
    pub fn from_matrix_translation(r: Matrix3<f64>, t: Vec3) -> Result<Self, GeometryError> {
        let residual = (r.transpose() * r - Matrix3::identity()).norm();
        if residual > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NotARotation(residual));
        }
        Ok(Self::from_parts(UnitQuaternion::from_matrix(&r), t))
    }

    /// Builds a pose from a (possibly unnormalized) quaternion given as
    /// `[x, y, z, w]` plus a translation.
    pub fn from_quaternion_xyzw(q: [f64; 4], t: Vec3) -> Self {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        Self::from_parts(UnitQuaternion::from_quaternion(quat), t)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.matrix
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    /// Quaternion components as `[x, y, z, w]`, sign-fixed to `w >= 0`.
    pub fn quaternion_xyzw(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.i, s * q.j, s * q.k, s * q.w]
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    /// `self ∘ other`: applying the result equals applying `other` first,
    /// then `self`.
    pub fn compose(&self, other: &RigidPose) -> RigidPose {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        RigidPose::from_parts(
            rotation,
            self.matrix * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidPose {
        let inv_rot = self.rotation.inverse();
        let inv = RigidPose::from_parts(inv_rot, Vec3::zeros());
        RigidPose {
            translation: -(inv.matrix * self.translation),
            ..inv
        }
    }

    pub fn transform_point(&self, p: &Point3) -> Point3 {
        Point3::from(self.matrix * p.coords + self.translation)
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.matrix * v
    }

    /// Rotation angle in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    /// Exponential map from a twist `[ω, v]` (rotation first) to SE(3).
    pub fn exp(twist: &Vector6<f64>) -> RigidPose {
        let omega = Vec3::new(twist[0], twist[1], twist[2]);
        let v = Vec3::new(twist[3], twist[4], twist[5]);
        let theta = omega.norm();
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        let translation = if theta < 1e-10 {
            v
        } else {
            let k = skew(&omega);
            let k2 = k * k;
            let a = (1.0 - theta.cos()) / (theta * theta);
            let b = (theta - theta.sin()) / (theta * theta * theta);
            let v_mat = Matrix3::identity() + k * a + k2 * b;
            v_mat * v
        };
        RigidPose::from_parts(rotation, translation)
    }

    /// Logarithm map to a twist `[ω, v]`; inverse of [`RigidPose::exp`].
    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let theta = omega.norm();
        let v = if theta < 1e-10 {
            self.translation
        } else {
            let k = skew(&omega);
            let k2 = k * k;
            let half = 0.5;
            let coeff = (1.0 / (theta * theta))
                * (1.0 - (theta * (1.0 + theta.cos())) / (2.0 * theta.sin()));
            let v_inv = Matrix3::identity() - k * half + k2 * coeff;
            v_inv * self.translation
        };
        Vector6::new(omega[0], omega[1], omega[2], v[0], v[1], v[2])
    }
}

pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Pinhole camera intrinsics for rectified images; `baseline` is the stereo
/// baseline in millimeters when the camera is one of a rectified pair.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub baseline: Option<f64>,
}

impl Intrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        baseline: Option<f64>,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            baseline,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.cx < 0.0 || self.cx >= self.width as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cx={} outside [0, {})",
                self.cx, self.width
            )));
        }
        if self.cy < 0.0 || self.cy >= self.height as f64 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "cy={} outside [0, {})",
                self.cy, self.height
            )));
        }
        if let Some(b) = self.baseline {
            if b.is_nan() || b <= 0.0 {
                return Err(GeometryError::InvalidIntrinsics(format!(
                    "baseline must be positive (got {b})"
                )));
            }
        }
        Ok(())
    }

    /// Projects a camera-frame point onto the image plane.
    pub fn project(&self, v: &Point3) -> Result<Pixel, GeometryError> {
        if v.z <= 0.0 {
            return Err(GeometryError::BehindCamera(v.z));
        }
        Ok(Pixel::new(
            self.fx * v.x / v.z + self.cx,
            self.fy * v.y / v.z + self.cy,
        ))
    }

    /// Lifts a pixel with known depth back into the camera frame. The
    /// returned point has `z == depth`.
    pub fn backproject(&self, p: &Pixel, depth: f64) -> Result<Point3, GeometryError> {
        if depth.is_nan() || depth <= 0.0 {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(Point3::new(
            (p.x - self.cx) * depth / self.fx,
            (p.y - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// True when the pixel falls inside the image bounds.
    pub fn contains(&self, p: &Pixel) -> bool {
        p.x >= 0.0 && p.x < self.width as f64 && p.y >= 0.0 && p.y < self.height as f64
    }

    /// Intrinsics of the image downscaled by `1 << level`.
    pub fn pyramid_level(&self, level: u32) -> Intrinsics {
        let s = 1.0 / (1u32 << level) as f64;
        Intrinsics {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: (self.width >> level).max(1),
            height: (self.height >> level).max(1),
            baseline: self.baseline,
        }
    }
}

/// Closed-form least-squares rigid transform `T` minimizing
/// `Σ ‖dst_i − T·src_i‖²` over paired points (SVD alignment, no scale).
pub fn rigid_align_points(src: &[Point3], dst: &[Point3]) -> Result<RigidPose, GeometryError> {
    if src.len() != dst.len() || src.len() < 2 {
        return Err(GeometryError::DegeneratePoints(format!(
            "need >= 2 paired points, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let src_mean = src.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let dst_mean = dst.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;

    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s.coords - src_mean) * (d.coords - dst_mean).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        GeometryError::DegeneratePoints("SVD failed on cross-covariance".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        GeometryError::DegeneratePoints("SVD failed on cross-covariance".into())
    })?;
    let s = svd.singular_values;

    // Rank-deficient spreads (coincident or collinear points) leave the
    // rotation underdetermined; pick the minimal one so e.g. a two-point
    // alignment along a common axis comes back as a pure translation.
    if s[1] <= 1e-9 * s[0].max(1e-12) {
        let rotation = if s[0] <= 1e-12 {
            UnitQuaternion::identity()
        } else {
            let src_dir = u.column(0).into_owned();
            let dst_dir = v_t.transpose().column(0).into_owned();
            UnitQuaternion::rotation_between(&src_dir, &dst_dir).unwrap_or_else(|| {
                let axis = perpendicular_to(&src_dir);
                UnitQuaternion::from_axis_angle(
                    &nalgebra::Unit::new_normalize(axis),
                    std::f64::consts::PI,
                )
            })
        };
        let t = dst_mean - rotation * src_mean;
        return Ok(RigidPose::from_parts(rotation, t));
    }

    let mut r = v_t.transpose() * u.transpose();
    if r.determinant() < 0.0 {
        let mut v = v_t.transpose();
        v.column_mut(2).neg_mut();
        r = v * u.transpose();
    }
    let t = dst_mean - r * src_mean;
    RigidPose::from_matrix_translation(r, t)
}

fn perpendicular_to(v: &Vec3) -> Vec3 {
    let candidate = if v.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    v.cross(&candidate)
}

/// Condition check used by callers that need at least three non-collinear
/// points: the second singular value of the centered source spread must not
/// vanish.
pub fn points_are_collinear(points: &[Point3]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |a, p| a + p.coords) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let c = p.coords - mean;
        cov += c * c.transpose();
    }
    let svd = cov.svd(false, false);
    let s = svd.singular_values;
    s[1] <= 1e-9 * s[0].max(1e-12)
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn arb_pose() -> impl Strategy<Value = RigidPose> {
        (
            (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
            -3.0f64..3.0,
            (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0),
        )
            .prop_filter_map("zero axis", |(axis, angle, t)| {
                let axis = Vec3::new(axis.0, axis.1, axis.2);
                (axis.norm() > 1e-3).then(|| {
                    RigidPose::from_axis_angle(&axis, angle)
                        .compose(&RigidPose::from_translation(t.0, t.1, t.2))
                })
            })
    }

    proptest! {
        #[test]
        fn backproject_project_round_trip(
            x in -40.0f64..40.0,
            y in -40.0f64..40.0,
            z in 1.0f64..200.0,
        ) {
            let k = Intrinsics::new(100.0, 120.0, 50.0, 40.0, 100, 80, None).unwrap();
            let v = Point3::new(x, y, z);
            let p = k.project(&v).unwrap();
            let back = k.backproject(&p, v.z).unwrap();
            prop_assert!((back - v).norm() < 1e-6);
        }

        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.translation() - right.translation()).norm() < 1e-9);
            prop_assert!(left.inverse().compose(&right).rotation_angle() < 1e-9);
        }

        #[test]
        fn transforms_preserve_distances(
            t in arb_pose(),
            p in (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0),
            q in (-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0),
        ) {
            let p = Point3::new(p.0, p.1, p.2);
            let q = Point3::new(q.0, q.1, q.2);
            let before = (p - q).norm();
            let after = (t.transform_point(&p) - t.transform_point(&q)).norm();
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
