//! Pinhole camera model, SE(3) rigid transforms, and projection /
//! back-projection between pixel and 3D space.
//!
//! Conventions used throughout the crate:
//!
//! - Pixel coordinates are `(u, v) = (column, row)`, origin at the top-left
//!   corner, continuous (sub-pixel positions are meaningful, never rounded).
//! - The camera frame is right-handed with `z` pointing through the lens;
//!   points are only projectable at `z > 0`.
//! - Rotations are stored as 3x3 orthonormal matrices.
//! - Twists are 6-vectors `[v | w]`: translation first, axis-angle rotation
//!   last. `se3_exp` maps a twist to `(R, t) = (exp([w]x), v)`.
//! - Depth is only observed at frame 1; nothing in this module reads depth
//!   for later frames.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Orthonormality / determinant tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-9;

/// Rotation angles closer to pi than this are rejected by `se3_log`.
pub const LOG_NEAR_PI_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("point depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("rotation angle {0} is within {LOG_NEAR_PI_TOL} of pi; log map is ill-conditioned")]
    LogNearPi(f64),
    #[error("invalid rotation matrix: {0}")]
    InvalidRotation(String),
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("invalid motion flow: {0}")]
    InvalidFlow(String),
}

/// An SE(3) element: orthonormal rotation plus translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, validating that `rotation` is orthonormal with
    /// determinant one (both within `ROTATION_TOL`).
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if !ortho_err.is_finite() || ortho_err > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "R^T R deviates from identity by {ortho_err:.3e}"
            )));
        }
        let det_err = (rotation.determinant() - 1.0).abs();
        if det_err > ROTATION_TOL {
            return Err(GeometryError::InvalidRotation(format!(
                "det(R) deviates from 1 by {det_err:.3e}"
            )));
        }
        if !translation.iter().all(|c| c.is_finite()) {
            return Err(GeometryError::InvalidRotation(
                "translation has non-finite components".into(),
            ));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    /// Internal constructor for operations that preserve the invariants
    /// structurally (composition, exp map, inverse).
    pub(crate) fn from_parts(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `self.compose(&other)` applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform::from_parts(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::from_parts(rt, -(rt * self.translation))
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn rotation_angle(&self) -> f64 {
        let c = ((self.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        c.acos()
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Matrix3::identity()).abs().max() <= tol
            && self.translation.abs().max() <= tol
    }
}

/// On-disk form of a transform: rotation as 9 row-major entries plus a
/// 3-vector translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RigidTransformData {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
}

impl From<&RigidTransform> for RigidTransformData {
    fn from(tf: &RigidTransform) -> Self {
        let m = tf.rotation();
        RigidTransformData {
            r: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
            t: [tf.translation().x, tf.translation().y, tf.translation().z],
        }
    }
}

impl TryFrom<&RigidTransformData> for RigidTransform {
    type Error = GeometryError;

    fn try_from(d: &RigidTransformData) -> Result<Self, GeometryError> {
        let r = &d.r;
        let rotation = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        RigidTransform::new(rotation, Vector3::new(d.t[0], d.t[1], d.t[2]))
    }
}

/// Pinhole camera intrinsics plus the camera-to-robot-base extrinsic.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub cam_to_base: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
        cam_to_base: RigidTransform,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if !(0.0..width).contains(&cx) || !(0.0..height).contains(&cy) {
            return Err(GeometryError::InvalidCamera(format!(
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
            cam_to_base,
        })
    }

    /// Same intrinsics with an identity camera-to-base transform.
    pub fn with_identity_extrinsic(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        Self::new(fx, fy, cx, cy, width, height, RigidTransform::identity())
    }
}

/// Projects a camera-frame point to continuous pixel coordinates.
pub fn project(cam: &CameraModel, p: &Vector3<f64>) -> Result<[f64; 2], GeometryError> {
    if p.z <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(p.z));
    }
    Ok([
        cam.fx * p.x / p.z + cam.cx,
        cam.fy * p.y / p.z + cam.cy,
    ])
}

/// Lifts a pixel with known depth back into the camera frame.
pub fn back_project(cam: &CameraModel, uv: [f64; 2], depth: f64) -> Result<Vector3<f64>, GeometryError> {
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(Vector3::new(
        (uv[0] - cam.cx) * depth / cam.fx,
        (uv[1] - cam.cy) * depth / cam.fy,
        depth,
    ))
}

/// A set of camera-frame 3D points.
#[derive(Debug, Clone)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::InvalidCloud("cloud is empty".into()));
        }
        if !points.iter().all(|p| p.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidCloud(
                "cloud has non-finite coordinates".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Diameter of the centroid-centered bounding sphere: twice the largest
    /// distance from the centroid to any point.
    pub fn bounding_sphere_diameter(&self) -> f64 {
        let c = self.centroid();
        2.0 * self
            .points
            .iter()
            .map(|p| (p - c).norm())
            .fold(0.0, f64::max)
    }
}

/// Applies a rigid transform to every point of a cloud.
pub fn apply_transform(t: &RigidTransform, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
    }
}

/// Tracked pixel keypoints over time: `T` frames of `N` points each.
///
/// Coordinates may leave the image bounds; occlusion is not modeled.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFlow2D {
    tracks: Vec<Vec<[f64; 2]>>,
}

impl MotionFlow2D {
    pub fn new(tracks: Vec<Vec<[f64; 2]>>) -> Result<Self, GeometryError> {
        if tracks.len() < 2 {
            return Err(GeometryError::InvalidFlow(format!(
                "need at least 2 frames, got {}",
                tracks.len()
            )));
        }
        let n = tracks[0].len();
        if n < 3 {
            return Err(GeometryError::InvalidFlow(format!(
                "need at least 3 keypoints, got {n}"
            )));
        }
        for (t, frame) in tracks.iter().enumerate() {
            if frame.len() != n {
                return Err(GeometryError::InvalidFlow(format!(
                    "frame {t} has {} points, expected {n}",
                    frame.len()
                )));
            }
            if !frame.iter().all(|p| p[0].is_finite() && p[1].is_finite()) {
                return Err(GeometryError::InvalidFlow(format!(
                    "frame {t} has non-finite coordinates"
                )));
            }
        }
        Ok(Self { tracks })
    }

    pub fn num_frames(&self) -> usize {
        self.tracks.len()
    }

    pub fn num_points(&self) -> usize {
        self.tracks[0].len()
    }

    pub fn frame(&self, t: usize) -> &[[f64; 2]] {
        &self.tracks[t]
    }

    pub fn frames(&self) -> &[Vec<[f64; 2]>] {
        &self.tracks
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues formula; series expansion below `1e-8` radians.
pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    if theta < 1e-8 {
        // sin(t)/t ~ 1 - t^2/6, (1-cos t)/t^2 ~ 1/2 - t^2/24
        let a = 1.0 - theta * theta / 6.0;
        let b = 0.5 - theta * theta / 24.0;
        return Matrix3::identity() + k * a + k * k * b;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of `so3_exp`. Fails within `LOG_NEAR_PI_TOL` of a half-turn where
/// the axis extraction is ill-conditioned; callers re-seed instead.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = c.acos();
    if (std::f64::consts::PI - theta).abs() < LOG_NEAR_PI_TOL {
        return Err(GeometryError::LogNearPi(theta));
    }
    let axis_raw = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    if theta < 1e-8 {
        // vee(R - R^T)/2 ~ omega for small angles
        return Ok(axis_raw * 0.5);
    }
    Ok(axis_raw * (theta / (2.0 * theta.sin())))
}

/// Right Jacobian of SO(3): `exp(w + d) ~ exp(w) exp(Jr(w) d)`.
pub fn so3_right_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    if theta < 1e-6 {
        return Matrix3::identity() - k * 0.5 + k * k * (1.0 / 6.0);
    }
    let t2 = theta * theta;
    let a = (1.0 - theta.cos()) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Matrix3::identity() - k * a + k * k * b
}

/// Maps a twist `[v | w]` to the transform `(exp([w]x), v)`.
pub fn se3_exp(twist: &Vector6<f64>) -> RigidTransform {
    let v = Vector3::new(twist[0], twist[1], twist[2]);
    let w = Vector3::new(twist[3], twist[4], twist[5]);
    RigidTransform::from_parts(so3_exp(&w), v)
}

/// Inverse of `se3_exp` on the domain of rotation angles below pi.
pub fn se3_log(t: &RigidTransform) -> Result<Vector6<f64>, GeometryError> {
    let w = so3_log(t.rotation())?;
    let v = t.translation();
    Ok(Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_cam() -> CameraModel {
        CameraModel::with_identity_extrinsic(100.0, 100.0, 50.0, 50.0, 100.0, 100.0).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let cam = test_cam();
        let uv = project(&cam, &Vector3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(uv, [50.0, 50.0]);
    }

    #[test]
    fn projection_scales_by_focal_length() {
        let cam = test_cam();
        let uv = project(&cam, &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!(uv, [100.0, 50.0]);
    }

    #[test]
    fn project_rejects_nonpositive_depth() {
        let cam = test_cam();
        assert!(matches!(
            project(&cam, &Vector3::new(0.0, 0.0, 0.0)),
            Err(GeometryError::NonPositiveDepth(_))
        ));
        assert!(matches!(
            project(&cam, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth(_))
        ));
    }

    #[test]
    fn principal_point_lifts_to_axis() {
        let cam = test_cam();
        let p = back_project(&cam, [cam.cx, cam.cy], 2.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn back_project_inverts_projection_example() {
        let cam = test_cam();
        let p = back_project(&cam, [150.0, 50.0], 1.0).unwrap();
        assert_abs_diff_eq!(p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn planar_lift_keeps_depth() {
        let cam = test_cam();
        let mut pts = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                let uv = [10.0 + 20.0 * i as f64, 10.0 + 20.0 * j as f64];
                pts.push(back_project(&cam, uv, 1.5).unwrap());
            }
        }
        let cloud = PointCloud::new(pts).unwrap();
        assert_eq!(cloud.len(), 25);
        assert!(cloud.points().iter().all(|p| (p.z - 1.5).abs() < 1e-15));
    }

    #[test]
    fn round_trip_project_back_project() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let cam = test_cam();
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..5.0),
            );
            let uv = project(&cam, &p).unwrap();
            let q = back_project(&cam, uv, p.z).unwrap();
            assert!((p - q).norm() < 1e-12, "round trip failed: {p:?} vs {q:?}");
        }
    }

    #[test]
    fn identity_transform_is_noop() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.1, 0.2, 1.0),
            Vector3::new(-0.1, 0.0, 1.2),
            Vector3::new(0.0, 0.3, 0.8),
        ])
        .unwrap();
        let out = apply_transform(&RigidTransform::identity(), &cloud);
        for (a, b) in cloud.points().iter().zip(out.points()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pure_translation_shifts_depth() {
        let t = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.1)).unwrap();
        let cloud = PointCloud::new(vec![
            Vector3::new(0.1, 0.2, 1.0),
            Vector3::new(-0.1, 0.0, 1.2),
            Vector3::new(0.0, 0.3, 0.8),
        ])
        .unwrap();
        let out = apply_transform(&t, &cloud);
        for (a, b) in cloud.points().iter().zip(out.points()) {
            assert_abs_diff_eq!(b.z - a.z, 0.1, epsilon = 1e-15);
        }
    }

    fn random_transform(rng: &mut ChaCha8Rng, max_angle: f64) -> RigidTransform {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let angle = rng.random_range(0.0..max_angle);
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        RigidTransform::from_parts(so3_exp(&(axis * angle)), t)
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t1 = random_transform(&mut rng, 2.0);
            let t2 = random_transform(&mut rng, 2.0);
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            // Oracle: direct matrix arithmetic.
            let direct = t2.rotation() * (t1.rotation() * p + t1.translation()) + t2.translation();
            let composed = t2.compose(&t1).apply(&p);
            assert!((direct - composed).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_twist_is_identity() {
        let t = se3_exp(&Vector6::zeros());
        assert!(t.is_identity(0.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let t = se3_exp(&Vector6::new(0.0, 0.0, 0.0, 0.0, 0.0, half_pi));
        // Closed-form Rodrigues oracle.
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((t.rotation() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn exp_log_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let axis = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let angle = rng.random_range(0.0..3.0);
            let twist = Vector6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                axis.x * angle,
                axis.y * angle,
                axis.z * angle,
            );
            let back = se3_log(&se3_exp(&twist)).unwrap();
            assert!((twist - back).norm() < 1e-9, "{twist:?} vs {back:?}");
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let r = so3_exp(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        let t = RigidTransform::from_parts(r, Vector3::zeros());
        assert!(matches!(se3_log(&t), Err(GeometryError::LogNearPi(_))));
    }

    #[test]
    fn exp_output_is_valid_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let twist = Vector6::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let t = se3_exp(&twist);
            // Re-validating through the checked constructor.
            assert!(RigidTransform::new(*t.rotation(), *t.translation()).is_ok());
        }
    }

    #[test]
    fn transform_data_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = random_transform(&mut rng, 2.5);
        let data = RigidTransformData::from(&t);
        let back = RigidTransform::try_from(&data).unwrap();
        assert_eq!(t, back);
    }

    proptest! {
        #[test]
        fn rigidity_preserves_pairwise_distances(
            seed in 0u64..1000,
            angle in 0.0..3.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_transform(&mut rng, angle.max(1e-3));
            let pts: Vec<Vector3<f64>> = (0..6)
                .map(|_| Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ))
                .collect();
            let cloud = PointCloud::new(pts).unwrap();
            let moved = apply_transform(&t, &cloud);
            for i in 0..cloud.len() {
                for j in (i + 1)..cloud.len() {
                    let d0 = (cloud.points()[i] - cloud.points()[j]).norm();
                    let d1 = (moved.points()[i] - moved.points()[j]).norm();
                    prop_assert!((d0 - d1).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn projection_is_equivariant_under_transforms(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cam = test_cam();
            let t = random_transform(&mut rng, 0.5);
            let pts: Vec<Vector3<f64>> = (0..5)
                .map(|_| Vector3::new(
                    rng.random_range(-0.2..0.2),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.8..1.5),
                ))
                .collect();
            let cloud = PointCloud::new(pts).unwrap();
            let moved = apply_transform(&t, &cloud);
            for (p, q) in cloud.points().iter().zip(moved.points()) {
                if q.z > 0.0 {
                    let a = project(&cam, &t.apply(p)).unwrap();
                    let b = project(&cam, q).unwrap();
                    prop_assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
                }
            }
        }
    }
}
