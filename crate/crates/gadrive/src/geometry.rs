//! Pinhole camera model, rigid transforms, and the unproject/project
//! primitives everything else is built on.
//!
//! Conventions: zero-skew pinhole intrinsics, pixel centers at integer
//! coordinates, poses are camera-to-world, all geometry in `f64`.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("rotation is not a proper rotation (orthonormality residual {residual:.3e}, det {det:.6})")]
    InvalidRotation { residual: f64, det: f64 },
    #[error("depth must be finite and > 0, got {0}")]
    InvalidDepth(f64),
    #[error("pixel ({u}, {v}) outside image bounds {width}x{height}")]
    PixelOutOfBounds { u: f64, v: f64, width: u32, height: u32 },
    #[error("point is non-finite")]
    NonFinitePoint,
    #[error("point lies exactly on the camera plane (z = 0)")]
    DegenerateProjection,
    #[error("depth map has invalid shape: {0}")]
    InvalidDepthMap(String),
}

/// Zero-skew pinhole intrinsics. Focal lengths and principal point in
/// pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fx.is_finite()) || !(fy > 0.0 && fy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be finite and positive, got fx={fx}, fy={fy}"
            )));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "principal point must be finite, got cx={cx}, cy={cy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image dimensions must be >= 1, got {width}x{height}"
            )));
        }
        Ok(Self { fx, fy, cx, cy, width, height })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Closed-form inverse of the zero-skew intrinsic matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn contains_pixel(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

/// Camera-to-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-6;

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let residual = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if residual > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidRotation { residual, det });
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Rotation about the z axis by `angle` radians plus a translation.
    pub fn from_z_rotation(angle: f64, translation: Vector3<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let rotation = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { rotation, translation }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates (equals the translation for a
    /// camera-to-world pose).
    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rotation = self.rotation.transpose();
        Self { rotation, translation: -(rotation * self.translation) }
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn translated(&self, delta: Vector3<f64>) -> Self {
        Self { rotation: self.rotation, translation: self.translation + delta }
    }
}

/// Per-pixel depth in meters along the camera z axis, with a validity
/// grid. Invalid pixels carry no depth and are never unprojected.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a depth map from row-major values; non-finite or
    /// non-positive entries are marked invalid.
    pub fn from_values(width: u32, height: u32, values: Vec<f64>) -> Result<Self, GeometryError> {
        let n = width as usize * height as usize;
        if values.len() != n {
            return Err(GeometryError::InvalidDepthMap(format!(
                "expected {n} values for {width}x{height}, got {}",
                values.len()
            )));
        }
        let valid = values.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        Ok(Self { width, height, values, valid })
    }

    pub fn from_values_with_validity(
        width: u32,
        height: u32,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self, GeometryError> {
        let n = width as usize * height as usize;
        if values.len() != n || valid.len() != n {
            return Err(GeometryError::InvalidDepthMap(format!(
                "expected {n} values and flags for {width}x{height}, got {} and {}",
                values.len(),
                valid.len()
            )));
        }
        for (i, (d, v)) in values.iter().zip(&valid).enumerate() {
            if *v && !(d.is_finite() && *d > 0.0) {
                return Err(GeometryError::InvalidDepthMap(format!(
                    "valid pixel {i} has non-positive or non-finite depth {d}"
                )));
            }
        }
        Ok(Self { width, height, values, valid })
    }

    pub fn constant(width: u32, height: u32, depth: f64) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, values: vec![depth; n], valid: vec![depth.is_finite() && depth > 0.0; n] }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Depth at an integer pixel, or `None` if out of bounds or invalid.
    pub fn get(&self, u: u32, v: u32) -> Option<f64> {
        if u >= self.width || v >= self.height {
            return None;
        }
        let i = v as usize * self.width as usize + u as usize;
        self.valid[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, u: u32, v: u32) -> bool {
        self.get(u, v).is_some()
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Row-major raw values; invalid pixels hold whatever was supplied.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        (0..self.height).flat_map(move |v| (0..w).map(move |u| (u, v)))
    }
}

/// Result of projecting a world point into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub cam_depth: f64,
    pub in_front: bool,
}

/// Lifts pixel `(u, v)` with the given depth into world coordinates:
/// `T · (depth · K⁻¹ · [u, v, 1])`.
pub fn unproject(
    u: f64,
    v: f64,
    depth: f64,
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> Result<Vector3<f64>, GeometryError> {
    if !(depth.is_finite() && depth > 0.0) {
        return Err(GeometryError::InvalidDepth(depth));
    }
    if !intrinsics.contains_pixel(u, v) {
        return Err(GeometryError::PixelOutOfBounds {
            u,
            v,
            width: intrinsics.width,
            height: intrinsics.height,
        });
    }
    let cam = Vector3::new(
        depth * (u - intrinsics.cx) / intrinsics.fx,
        depth * (v - intrinsics.cy) / intrinsics.fy,
        depth,
    );
    Ok(pose.transform_point(&cam))
}

/// Drops a world point into a camera: continuous pixel coordinates, the
/// point's depth along the camera z axis, and whether it is in front of
/// the camera.
pub fn project(
    point: &Vector3<f64>,
    intrinsics: &Intrinsics,
    pose: &Pose,
) -> Result<Projection, GeometryError> {
    if !(point.x.is_finite() && point.y.is_finite() && point.z.is_finite()) {
        return Err(GeometryError::NonFinitePoint);
    }
    let cam = pose.inverse_transform_point(point);
    if cam.z == 0.0 {
        return Err(GeometryError::DegenerateProjection);
    }
    Ok(Projection {
        u: intrinsics.fx * cam.x / cam.z + intrinsics.cx,
        v: intrinsics.fy * cam.y / cam.z + intrinsics.cy,
        cam_depth: cam.z,
        in_front: cam.z > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unproject_identity_camera() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = unproject(0.0, 0.0, 1.0, &k, &Pose::identity()).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn principal_point_lies_on_optical_axis() {
        let k = Intrinsics::new(600.0, 450.0, 3.0, 2.0, 8, 8).unwrap();
        for d in [0.5, 1.0, 42.0] {
            let p = unproject(3.0, 2.0, d, &k, &Pose::identity()).unwrap();
            assert_eq!(p, Vector3::new(0.0, 0.0, d));
        }
    }

    #[test]
    fn unproject_matches_straight_line_matrix_oracle() {
        // Independent oracle: explicit 3x3 inverse by the adjugate
        // formula, then plain matrix-vector products.
        let k = Intrinsics::new(600.0, 600.0, 480.0, 320.0, 960, 640).unwrap();
        let pose = Pose::from_z_rotation(std::f64::consts::FRAC_PI_2, Vector3::new(1.0, 2.0, 3.0));
        let got = unproject(320.0, 240.0, 7.5, &k, &pose).unwrap();

        let km = k.matrix();
        let det = km[(0, 0)] * (km[(1, 1)] * km[(2, 2)] - km[(1, 2)] * km[(2, 1)])
            - km[(0, 1)] * (km[(1, 0)] * km[(2, 2)] - km[(1, 2)] * km[(2, 0)])
            + km[(0, 2)] * (km[(1, 0)] * km[(2, 1)] - km[(1, 1)] * km[(2, 0)]);
        let mut inv = Matrix3::zeros();
        for r in 0..3 {
            for c in 0..3 {
                let minor: Vec<f64> = (0..3)
                    .filter(|i| *i != c)
                    .flat_map(|i| (0..3).filter(|j| *j != r).map(move |j| km[(i, j)]))
                    .collect();
                let cof = minor[0] * minor[3] - minor[1] * minor[2];
                inv[(r, c)] = (if (r + c) % 2 == 0 { cof } else { -cof }) / det;
            }
        }
        let cam = 7.5 * inv * Vector3::new(320.0, 240.0, 1.0);
        let expect = pose.rotation() * cam + pose.translation();
        assert_relative_eq!(got, expect, max_relative = 1e-12);
    }

    #[test]
    fn project_identity_camera() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = project(&Vector3::new(0.0, 0.0, 1.0), &k, &Pose::identity()).unwrap();
        assert_eq!((p.u, p.v, p.cam_depth, p.in_front), (0.0, 0.0, 1.0, true));
    }

    #[test]
    fn point_behind_camera_is_not_in_front() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let p = project(&Vector3::new(0.0, 0.0, -2.0), &k, &Pose::identity()).unwrap();
        assert!(!p.in_front);
    }

    #[test]
    fn point_on_camera_plane_is_degenerate() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let err = project(&Vector3::new(1.0, 0.0, 0.0), &k, &Pose::identity()).unwrap_err();
        assert_eq!(err, GeometryError::DegenerateProjection);
    }

    #[test]
    fn rejects_bad_depth_and_out_of_bounds_pixels() {
        let k = Intrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        assert!(unproject(0.0, 0.0, 0.0, &k, &Pose::identity()).is_err());
        assert!(unproject(0.0, 0.0, -1.0, &k, &Pose::identity()).is_err());
        assert!(unproject(0.0, 0.0, f64::NAN, &k, &Pose::identity()).is_err());
        assert!(unproject(4.0, 0.0, 1.0, &k, &Pose::identity()).is_err());
        assert!(unproject(-0.1, 0.0, 1.0, &k, &Pose::identity()).is_err());
    }

    #[test]
    fn pose_inverse_composes_to_identity() {
        let pose = Pose::from_z_rotation(0.7, Vector3::new(-2.0, 4.0, 0.5));
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation() - Matrix3::identity()).abs().max() < 1e-9);
        assert!(id.translation().abs().max() < 1e-9);
    }

    #[test]
    fn rejects_reflection_as_rotation() {
        let reflection = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Pose::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let k = Intrinsics::new(500.0, 500.0, 2.0, 2.0, 5, 5).unwrap();
        let pose = Pose::from_z_rotation(1.1, Vector3::new(1.0, -1.0, 2.0));
        let delta = Vector3::new(0.25, -3.5, 10.0);
        let shifted = pose.translated(delta);
        let a = unproject(3.0, 1.0, 6.0, &k, &pose).unwrap();
        let b = unproject(3.0, 1.0, 6.0, &k, &shifted).unwrap();
        assert_eq!(b - a, delta);
    }
}
