//! Scan preparation: frame transform, per-point noise and the exclusion area.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ExecMode;

pub type Point = [f64; 3];

/// Points in the sensor frame, meters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    /// Seconds.
    pub stamp: f64,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, stamp: f64) -> Self {
        Self { points, stamp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Sensor-to-map rigid motion `p_map = R·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ORTHO_TOL: f64 = 1e-9;

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = Self {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
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

    /// Z-Y-X Euler composition (yaw about z applied last), radians.
    pub fn from_xyz_ypr(position: [f64; 3], yaw: f64, pitch: f64, roll: f64) -> Self {
        let r = Rotation3::from_euler_angles(roll, pitch, yaw);
        Self {
            rotation: *r.matrix(),
            translation: Vector3::from(position),
        }
    }

    /// Builds a pose from a quaternion that must be unit length within `1e-6`.
    pub fn from_quaternion(translation: [f64; 3], qw: f64, qx: f64, qy: f64, qz: f64) -> Result<Self> {
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidPose(format!(
                "quaternion norm {norm} is not 1 within 1e-6"
            )));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        let pose = Self {
            rotation: *uq.to_rotation_matrix().matrix(),
            translation: Vector3::from(translation),
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        if r.iter().chain(self.translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidPose("non-finite entries".into()));
        }
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (|RᵀR − I| = {err:e})"
            )));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant {det}")));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        let v = self.rotation * Vector3::new(p[0], p[1], p[2]) + self.translation;
        [v.x, v.y, v.z]
    }

    /// Rotation-only application, for directions.
    #[inline]
    pub fn rotate(&self, d: &Point) -> Point {
        let v = self.rotation * Vector3::new(d[0], d[1], d[2]);
        [v.x, v.y, v.z]
    }

    pub fn origin(&self) -> Point {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    /// Unit quaternion `(w, x, y, z)` of the rotation.
    pub fn quaternion(&self) -> [f64; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        [q.w, q.i, q.j, q.k]
    }
}

/// Maps every point into the map frame, preserving order.
pub fn transform_cloud(cloud: &PointCloud, pose: &RigidTransform) -> Result<Vec<Point>> {
    transform_cloud_with(cloud, pose, ExecMode::Deterministic)
}

pub fn transform_cloud_with(cloud: &PointCloud, pose: &RigidTransform, mode: ExecMode) -> Result<Vec<Point>> {
    pose.validate()?;
    Ok(match mode {
        ExecMode::Deterministic => cloud.points.iter().map(|p| pose.apply(p)).collect(),
        ExecMode::Parallel => cloud.points.par_iter().map(|p| pose.apply(p)).collect(),
    })
}

/// Distance-dependent measurement noise `σ_p² = α_d·d²`, floored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorNoiseParams {
    pub alpha_d: f64,
    /// m²
    pub min_variance: f64,
}

impl Default for SensorNoiseParams {
    fn default() -> Self {
        Self {
            alpha_d: 1e-4,
            min_variance: 1e-6,
        }
    }
}

impl SensorNoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_d >= 0.0) || !(self.min_variance > 0.0) {
            return Err(Error::InvalidParam(format!(
                "noise model needs alpha_d >= 0 and min_variance > 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn point_variance(dist: f64, params: &SensorNoiseParams) -> f64 {
    (params.alpha_d * dist * dist).max(params.min_variance)
}

/// Ramp-shaped region above the sensor whose points are discarded.
///
/// For a point at horizontal range `r` and height `z` relative to the sensor,
/// the ceiling is `min(d_max, b + max(0, r − c)·tan θ_a)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExclusionParams {
    pub theta_a: f64,
    pub b: f64,
    pub c: f64,
    pub d_max: f64,
    pub enabled: bool,
}

impl Default for ExclusionParams {
    fn default() -> Self {
        Self {
            theta_a: 10f64.to_radians(),
            b: 0.3,
            c: 0.5,
            d_max: 1.5,
            enabled: true,
        }
    }
}

impl ExclusionParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..std::f64::consts::FRAC_PI_2).contains(&self.theta_a)
            && self.b >= 0.0
            && self.c >= 0.0
            && self.d_max > self.b;
        if !ok {
            return Err(Error::InvalidParam(format!("bad exclusion area {self:?}")));
        }
        Ok(())
    }

    #[inline]
    pub fn ceiling(&self, r: f64) -> f64 {
        (self.b + (r - self.c).max(0.0) * self.theta_a.tan()).min(self.d_max)
    }
}

/// `p_rel` is the point relative to the sensor origin in a gravity-aligned frame.
#[inline]
pub fn is_excluded(p_rel: &Point, params: &ExclusionParams) -> bool {
    if !params.enabled {
        return false;
    }
    let r = p_rel[0].hypot(p_rel[1]);
    p_rel[2] > params.ceiling(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn transform_examples() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 0.0], [-3.0, 0.5, 7.0]], 0.0);
        assert_eq!(transform_cloud(&cloud, &RigidTransform::identity()).unwrap(), cloud.points);

        let t = RigidTransform::from_translation(0.0, 0.0, 1.0);
        assert_eq!(transform_cloud(&cloud, &t).unwrap()[0], [1.0, 2.0, 1.0]);

        // Hand-applied Rz(90°) = [[0,-1,0],[1,0,0],[0,0,1]].
        let yaw = RigidTransform::from_xyz_ypr([0.0; 3], FRAC_PI_2, 0.0, 0.0);
        let p = yaw.apply(&[1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-12 && (p[1] - 1.0).abs() < 1e-12 && p[2].abs() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut bad = RigidTransform::identity();
        bad.rotation[(0, 0)] = 1.1;
        let cloud = PointCloud::new(vec![[0.0; 3]], 0.0);
        assert!(matches!(transform_cloud(&cloud, &bad), Err(Error::InvalidPose(_))));
        let mut mirror = RigidTransform::identity();
        mirror.rotation[(2, 2)] = -1.0;
        assert!(mirror.validate().is_err());
        assert!(RigidTransform::from_quaternion([0.0; 3], 1.0, 0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn quaternion_round_trip() {
        let p = RigidTransform::from_xyz_ypr([1.0, 2.0, 3.0], 0.7, -0.2, 0.1);
        let [w, x, y, z] = p.quaternion();
        let q = RigidTransform::from_quaternion([1.0, 2.0, 3.0], w, x, y, z).unwrap();
        assert!((q.rotation - p.rotation).abs().max() < 1e-12);
    }

    #[test]
    fn variance_examples() {
        let n = SensorNoiseParams {
            alpha_d: 0.01,
            min_variance: 1e-4,
        };
        assert!((point_variance(2.0, &n) - 0.04).abs() < 1e-15);
        assert_eq!(point_variance(0.0, &n), 1e-4);
        let flat = SensorNoiseParams {
            alpha_d: 0.0,
            ..n
        };
        assert_eq!(point_variance(25.0, &flat), 1e-4);
    }

    #[test]
    fn exclusion_examples() {
        let p = ExclusionParams {
            theta_a: 45f64.to_radians(),
            b: 0.5,
            c: 0.2,
            d_max: 1.0,
            enabled: true,
        };
        assert!(is_excluded(&[0.2, 0.0, 0.6], &p));
        assert!(!is_excluded(&[1.0, 0.0, 0.6], &p));
        assert!(!is_excluded(&[0.0, 0.0, -0.5], &p));
        // On the boundary the point is kept.
        assert!(!is_excluded(&[0.0, 0.2, 0.5], &p));
        assert!(!is_excluded(&[0.2, 0.0, 0.6], &ExclusionParams { enabled: false, ..p }));
    }

    proptest! {
        #[test]
        fn rigid_motion_preserves_distances(
            yaw in -3.2f64..3.2, pitch in -1.5f64..1.5, roll in -3.2f64..3.2,
            t in prop::array::uniform3(-10.0f64..10.0),
            a in prop::array::uniform3(-20.0f64..20.0),
            b in prop::array::uniform3(-20.0f64..20.0),
        ) {
            let pose = RigidTransform::from_xyz_ypr(t, yaw, pitch, roll);
            pose.validate().unwrap();
            let (pa, pb) = (pose.apply(&a), pose.apply(&b));
            let d0 = ((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt();
            let d1 = ((pa[0]-pb[0]).powi(2) + (pa[1]-pb[1]).powi(2) + (pa[2]-pb[2]).powi(2)).sqrt();
            prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
        }

        #[test]
        fn exclusion_is_monotone(
            theta in 0.0f64..1.5, b in 0.0f64..1.0, c in 0.0f64..2.0, extra in 0.01f64..2.0,
            r in 0.0f64..10.0, z in -2.0f64..3.0, dz in 0.0f64..1.0, dr in 0.0f64..3.0,
        ) {
            let p = ExclusionParams { theta_a: theta, b, c, d_max: b + extra, enabled: true };
            if is_excluded(&[r, 0.0, z], &p) {
                prop_assert!(is_excluded(&[r, 0.0, z + dz], &p));
            }
            if !is_excluded(&[r, 0.0, z], &p) {
                prop_assert!(!is_excluded(&[r + dr, 0.0, z], &p));
            }
        }

        #[test]
        fn variance_non_decreasing(a in 0.0f64..0.1, d in 0.0f64..50.0, dd in 0.0f64..10.0) {
            let n = SensorNoiseParams { alpha_d: a, min_variance: 1e-6 };
            prop_assert!(point_variance(d + dd, &n) >= point_variance(d, &n));
        }
    }
}
