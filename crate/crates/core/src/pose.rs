//! Pose algebra shared by every other module.
//!
//! Conventions: a camera looks down its local −z axis with +y up. A [`Pose`]
//! stores the camera *in the world*: its centre and the camera-to-world
//! rotation. A [`RigidTransform`] is the opposite direction, world-to-camera
//! (`c = R·w + t`), which is what photogrammetry tools export.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Position = Vector3<f64>;

/// Camera-frame forward axis.
pub const FORWARD: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoseError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("point is not projectable (camera z = {0})")]
    NotProjectable(f64),
}

/// Unit quaternion with the sign fixed so that `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes the given components.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Result<Self, PoseError> {
        let raw = [w, x, y, z];
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(PoseError::InvalidArgument(format!(
                "non-finite quaternion {raw:?}"
            )));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(PoseError::InvalidArgument("zero-norm quaternion".into()));
        }
        // Leave already-unit input untouched so text round-trips are exact.
        let scale = if (norm - 1.0).abs() > 1e-12 { 1.0 / norm } else { 1.0 };
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        let s = scale * sign;
        Ok(Quaternion {
            w: w * s,
            x: x * s,
            y: y * s,
            z: z * s,
        })
    }

    pub fn from_array(q: [f64; 4]) -> Result<Self, PoseError> {
        Self::new(q[0], q[1], q[2], q[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Rotation of `angle` radians about `axis` (right-handed).
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Result<Self, PoseError> {
        let n = axis.norm();
        if !(n > 1e-12) || !angle.is_finite() {
            return Err(PoseError::InvalidArgument("degenerate axis-angle".into()));
        }
        let a = axis / n;
        let (s, c) = (angle / 2.0).sin_cos();
        Self::new(c, a.x * s, a.y * s, a.z * s)
    }

    /// Rotation of `yaw` radians about the world +y axis.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = (yaw / 2.0).sin_cos();
        Self::new(c, 0.0, s, 0.0).unwrap_or(Self::IDENTITY)
    }

    /// Hamilton product `self * other`.
    pub fn mul(self, o: Quaternion) -> Quaternion {
        let (a, b) = (self, o);
        Quaternion::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
        .expect("product of unit quaternions is finite and non-zero")
    }

    pub fn conjugate(self) -> Quaternion {
        Quaternion::new(self.w, -self.x, -self.y, -self.z).expect("unit quaternion")
    }

    pub fn dot(self, o: Quaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn to_matrix(self) -> Matrix3<f64> {
        let Quaternion { w, x, y, z } = self;
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Quaternion of a rotation matrix (Shepperd's method).
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self, PoseError> {
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
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
        Self::new(w, x, y, z)
    }

    pub fn rotate(self, v: &Vector3<f64>) -> Vector3<f64> {
        self.to_matrix() * v
    }

    /// World-space direction the camera with this orientation looks along.
    pub fn view_direction(self) -> ViewDirection {
        ViewDirection::new(self.rotate(&FORWARD)).expect("rotation preserves norm")
    }
}

impl Default for Quaternion {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Matrix of a quaternion, rejecting non-finite components.
pub fn quat_to_matrix(q: Quaternion) -> Result<Matrix3<f64>, PoseError> {
    if q.to_array().iter().any(|v| !v.is_finite()) {
        return Err(PoseError::InvalidArgument("non-finite quaternion".into()));
    }
    Ok(q.to_matrix())
}

/// Unit direction vector in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewDirection(Vector3<f64>);

impl ViewDirection {
    pub fn new(v: Vector3<f64>) -> Result<Self, PoseError> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(PoseError::InvalidArgument(
                "view direction needs a finite non-zero vector".into(),
            ));
        }
        Ok(ViewDirection(v / n))
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Camera placement in the world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    #[serde(with = "position_serde")]
    pub position: Position,
    pub rotation: Quaternion,
}

impl Pose {
    pub fn new(position: Position, rotation: Quaternion) -> Self {
        Pose { position, rotation }
    }

    pub fn identity() -> Self {
        Pose::new(Position::zeros(), Quaternion::IDENTITY)
    }

    pub fn view_direction(&self) -> ViewDirection {
        self.rotation.view_direction()
    }

    /// The world-to-camera transform of this camera.
    pub fn world_to_camera(&self) -> RigidTransform {
        let r = self.rotation.to_matrix().transpose();
        let t = -(r * self.position);
        RigidTransform {
            rotation: r,
            translation: t,
        }
    }

    /// Camera pose from a world-to-camera transform: centre `−Rᵀt`, rotation `Rᵀ`.
    pub fn from_world_to_camera(t: &RigidTransform) -> Result<Self, PoseError> {
        let rotation = Quaternion::from_matrix(&t.rotation.transpose())?;
        Ok(Pose::new(t.camera_center(), rotation))
    }
}

/// World-to-camera rigid transform `c = R·w + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, PoseError> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(PoseError::InvalidArgument("non-finite transform".into()));
        }
        let drift = orthonormality_drift(&rotation);
        if drift > ORTHONORMAL_TOL || (rotation.determinant() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(PoseError::InvalidArgument(format!(
                "rotation is not orthonormal (drift {drift:e})"
            )));
        }
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn from_quaternion(q: Quaternion, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: q.to_matrix(),
            translation,
        }
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn world_to_camera(&self, w: &Position) -> Position {
        self.rotation * w + self.translation
    }

    pub fn camera_to_world(&self, c: &Position) -> Position {
        self.rotation.transpose() * (c - self.translation)
    }

    /// Camera centre in world coordinates.
    pub fn camera_center(&self) -> Position {
        -(self.rotation.transpose() * self.translation)
    }

    /// World-space viewing direction: the camera's −z axis mapped through the
    /// inverse transform, minus the mapped origin.
    pub fn pose_vector(&self) -> ViewDirection {
        let tip = self.camera_to_world(&FORWARD);
        let origin = self.camera_to_world(&Vector3::zeros());
        ViewDirection::new(tip - origin).expect("rigid transform preserves length")
    }
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_drift(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).amax()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, PoseError> {
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() || !fx.is_finite() || !fy.is_finite() {
            return Err(PoseError::InvalidArgument(format!(
                "focal lengths must be positive and finite (fx={fx}, fy={fy})"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }
}

/// Pixel coordinates of a world point: perspective division of `K·(R·w + t)`.
///
/// Only points in front of the camera (camera z < 0) project.
pub fn project(k: &CameraIntrinsics, t: &RigidTransform, w: &Position) -> Result<(f64, f64), PoseError> {
    let c = t.world_to_camera(w);
    if !(c.z < 0.0) {
        return Err(PoseError::NotProjectable(c.z));
    }
    Ok((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy))
}

/// Angle in degrees of the relative rotation between two orientations, in [0, 180].
///
/// Equal to `2·acos(|⟨q1,q2⟩|)`, evaluated through `atan2` so that nearly
/// identical rotations keep full precision.
pub fn rotational_error_deg(q1: Quaternion, q2: Quaternion) -> f64 {
    let a = q1.to_array();
    let s = if q1.dot(q2) < 0.0 { -1.0 } else { 1.0 };
    let b = q2.to_array().map(|v| v * s);
    let diff = (0..4).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    let sum = (0..4).map(|i| (a[i] + b[i]).powi(2)).sum::<f64>().sqrt();
    4.0 * diff.atan2(sum).to_degrees()
}

mod position_serde {
    use super::Position;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(p: &Position, s: S) -> Result<S::Ok, S::Error> {
        [p.x, p.y, p.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Position, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(d)?;
        Ok(Position::new(x, y, z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>) -> bool {
        (a - b).amax() < 1e-12
    }

    fn yaw90() -> Quaternion {
        Quaternion::new(FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 0.0).unwrap()
    }

    #[test]
    fn matrix_examples() {
        assert!(close(&quat_to_matrix(Quaternion::IDENTITY).unwrap(), &Matrix3::identity()));
        let flip = quat_to_matrix(Quaternion::new(0.0, 0.0, 1.0, 0.0).unwrap()).unwrap();
        assert!(close(&flip, &Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0))));
        let r = quat_to_matrix(yaw90()).unwrap();
        assert!((r * FORWARD - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let q = Quaternion {
            w: f64::NAN,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        };
        assert!(quat_to_matrix(q).is_err());
        assert!(Quaternion::new(f64::INFINITY, 0.0, 0.0, 0.0).is_err());
        assert!(Quaternion::new(0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn canonical_sign() {
        let q = Quaternion::new(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert_eq!(q.to_array(), [0.5, -0.5, 0.5, -0.5]);
    }

    #[test]
    fn world_camera_examples() {
        let id = RigidTransform::identity();
        assert_eq!(id.world_to_camera(&Vector3::new(1.0, 2.0, 3.0)), Vector3::new(1.0, 2.0, 3.0));
        let t = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -5.0)).unwrap();
        assert_eq!(t.world_to_camera(&Vector3::new(0.0, 0.0, 5.0)), Vector3::zeros());
        let flip = RigidTransform::from_quaternion(Quaternion::new(0.0, 0.0, 1.0, 0.0).unwrap(), Vector3::zeros());
        assert!((flip.world_to_camera(&Vector3::x()) - Vector3::new(-1.0, 0.0, 0.0)).norm() < 1e-12);

        let t = RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 1.0, 1.0)).unwrap();
        assert_eq!(t.camera_to_world(&Vector3::zeros()), Vector3::new(-1.0, -1.0, -1.0));
        let yaw = RigidTransform::from_quaternion(yaw90(), Vector3::zeros());
        // Rᵀ·(0,0,-1) is the third row of R negated: (1, 0, 0) for the 90° yaw.
        assert!((yaw.camera_to_world(&FORWARD) - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pose_vector_examples() {
        assert_eq!(*RigidTransform::identity().pose_vector().vector(), FORWARD);
        let flip = RigidTransform::from_quaternion(Quaternion::new(0.0, 0.0, 1.0, 0.0).unwrap(), Vector3::new(3.0, -1.0, 2.0));
        assert!((flip.pose_vector().vector() - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let yaw = RigidTransform::from_quaternion(yaw90(), Vector3::zeros());
        let expected = -yaw.rotation().row(2).transpose();
        assert!((yaw.pose_vector().vector() - expected).norm() < 1e-12);
    }

    #[test]
    fn pose_and_transform_agree_on_view_direction() {
        let pose = Pose::new(Vector3::new(1.0, 2.0, 3.0), Quaternion::new(0.3, -0.2, 0.9, 0.1).unwrap());
        let t = pose.world_to_camera();
        assert!((t.pose_vector().vector() - pose.view_direction().vector()).norm() < 1e-12);
        assert!((t.camera_center() - pose.position).norm() < 1e-12);
        let back = Pose::from_world_to_camera(&t).unwrap();
        assert!(rotational_error_deg(back.rotation, pose.rotation) < 1e-6);
    }

    #[test]
    fn projection_examples() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let id = RigidTransform::identity();
        assert_eq!(project(&unit, &id, &Vector3::new(0.0, 0.0, -1.0)).unwrap(), (0.0, 0.0));
        let k = CameraIntrinsics::new(100.0, 100.0, 50.0, 50.0).unwrap();
        assert_eq!(project(&k, &id, &Vector3::new(0.5, 0.0, -1.0)).unwrap(), (0.0, 50.0));
        assert!(matches!(project(&k, &id, &Vector3::new(0.0, 0.0, 1.0)), Err(PoseError::NotProjectable(_))));
        assert!(project(&k, &id, &Vector3::new(1.0, 0.0, 0.0)).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rotational_error_examples() {
        let q = Quaternion::new(0.3, 0.1, -0.4, 0.2).unwrap();
        assert_eq!(rotational_error_deg(q, q), 0.0);
        let x90 = Quaternion::new(FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0, 0.0).unwrap();
        assert!((rotational_error_deg(Quaternion::IDENTITY, x90) - 90.0).abs() < 1e-9);
        let neg = Quaternion { w: -q.w, x: -q.x, y: -q.y, z: -q.z };
        assert_eq!(rotational_error_deg(q, neg), 0.0);
    }

    #[test]
    fn invalid_transform_rejected() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
    }

    fn unit_quat() -> impl Strategy<Value = Quaternion> {
        prop::array::uniform4(-1.0f64..1.0)
            .prop_filter("non-degenerate", |a| a.iter().map(|v| v * v).sum::<f64>() > 1e-3)
            .prop_map(|a| Quaternion::from_array(a).unwrap())
    }

    fn transform() -> impl Strategy<Value = RigidTransform> {
        (unit_quat(), prop::array::uniform3(-10.0f64..10.0))
            .prop_map(|(q, t)| RigidTransform::from_quaternion(q, Vector3::from(t)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn matrix_is_rotation(q in unit_quat()) {
            let r = quat_to_matrix(q).unwrap();
            prop_assert!(orthonormality_drift(&r) < 1e-9);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn camera_round_trip(t in transform(), w in prop::array::uniform3(-50.0f64..50.0)) {
            let w = Vector3::from(w);
            prop_assert!((t.camera_to_world(&t.world_to_camera(&w)) - w).norm() < 1e-9);
            prop_assert!((t.world_to_camera(&t.camera_to_world(&w)) - w).norm() < 1e-9);
            prop_assert!((t.pose_vector().vector().norm() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn matrix_round_trip(q in unit_quat()) {
            let back = Quaternion::from_matrix(&q.to_matrix()).unwrap();
            prop_assert!(rotational_error_deg(q, back) < 1e-5);
        }

        #[test]
        fn rotational_error_triangle(a in unit_quat(), b in unit_quat(), c in unit_quat()) {
            let neg = Quaternion { w: -a.w, x: -a.x, y: -a.y, z: -a.z };
            prop_assert_eq!(rotational_error_deg(a, neg), 0.0);
            let ab = rotational_error_deg(a, b);
            let bc = rotational_error_deg(b, c);
            let ac = rotational_error_deg(a, c);
            prop_assert!(ac <= ab + bc + 1e-6);
        }
    }
}
