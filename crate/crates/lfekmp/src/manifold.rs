//! Unit-quaternion geometry on S³ and rigid-frame algebra.
//!
//! Tangent vectors are full rotation vectors (angle·axis in radians), so the
//! 3×3 tangent-space covariances used elsewhere stay well-defined. Quaternions
//! are canonicalized to `w >= 0` after every operation, which makes the log
//! map single-valued and keeps tests deterministic.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rotation vector (axis · angle, radians). Magnitude <= pi after
/// canonicalization.
pub type RotVec = Vector3<f64>;

/// Unit quaternion stored with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct UnitQuat {
    inner: UnitQuaternion<f64>,
}

impl From<[f64; 4]> for UnitQuat {
    fn from(v: [f64; 4]) -> Self {
        UnitQuat::new(v[0], v[1], v[2], v[3])
    }
}

impl From<UnitQuat> for [f64; 4] {
    fn from(q: UnitQuat) -> Self {
        [q.w(), q.x(), q.y(), q.z()]
    }
}

impl Default for UnitQuat {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuat {
    pub fn identity() -> Self {
        Self {
            inner: UnitQuaternion::identity(),
        }
    }

    /// Builds a unit quaternion from components, normalizing and
    /// canonicalizing the sign.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::canonical(UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)))
    }

    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::canonical(UnitQuaternion::from_scaled_axis(axis * (angle / n)))
    }

    pub fn from_rotation_matrix(m: &Matrix3<f64>) -> Self {
        Self::canonical(UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix(m),
        ))
    }

    fn canonical(q: UnitQuaternion<f64>) -> Self {
        let mut raw = *q.quaternion();
        let flip = raw.w < 0.0
            || (raw.w == 0.0
                && (raw.i < 0.0
                    || (raw.i == 0.0 && (raw.j < 0.0 || (raw.j == 0.0 && raw.k < 0.0)))));
        if flip {
            raw = -raw;
        }
        Self {
            inner: UnitQuaternion::new_unchecked(raw.normalize()),
        }
    }

    pub fn w(&self) -> f64 {
        self.inner.quaternion().w
    }
    pub fn x(&self) -> f64 {
        self.inner.quaternion().i
    }
    pub fn y(&self) -> f64 {
        self.inner.quaternion().j
    }
    pub fn z(&self) -> f64 {
        self.inner.quaternion().k
    }

    pub fn inverse(&self) -> Self {
        Self::canonical(self.inner.inverse())
    }

    pub fn compose(&self, other: &UnitQuat) -> Self {
        Self::canonical(self.inner * other.inner)
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.inner * v
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.inner.to_rotation_matrix().into_inner()
    }

    pub fn norm(&self) -> f64 {
        self.inner.quaternion().norm()
    }

    /// Geodesic angle to `other` in [0, pi]. Computed from the quaternion
    /// chord length, which is exactly symmetric in its arguments and
    /// well-conditioned near zero.
    pub fn angle_to(&self, other: &UnitQuat) -> f64 {
        let a = self.inner.quaternion();
        let b = other.inner.quaternion();
        let diff = (a - b).norm();
        let sum = (a + b).norm();
        let chord = diff.min(sum);
        4.0 * (chord * 0.5).min(1.0).asin()
    }
}

/// Rotation vector of the relative rotation `base⁻¹ · q`; magnitude <= pi.
pub fn quat_log(base: &UnitQuat, q: &UnitQuat) -> RotVec {
    let rel = UnitQuat::canonical(base.inner.inverse() * q.inner);
    rel.inner.scaled_axis()
}

/// Inverse of [`quat_log`] on the geodesic ball |v| < pi: `base · exp(v)`.
pub fn quat_exp(base: &UnitQuat, v: &RotVec) -> UnitQuat {
    UnitQuat::canonical(base.inner * UnitQuaternion::from_scaled_axis(*v))
}

/// Parallel transport of a tangent-space matrix from the tangent at `from`
/// to the tangent at `to`, along the connecting geodesic. For the bi-invariant
/// metric on S³ this is an orthogonal conjugation by the half-geodesic
/// rotation, so the spectrum of `m` is preserved.
pub fn parallel_transport(from: &UnitQuat, to: &UnitQuat, m: &Matrix3<f64>) -> Matrix3<f64> {
    let omega = quat_log(from, to);
    let half = UnitQuaternion::from_scaled_axis(omega * 0.5)
        .to_rotation_matrix()
        .into_inner();
    let out = half.transpose() * m * half;
    // Symmetrize to wash out round-off.
    (out + out.transpose()) * 0.5
}

/// Position plus orientation. 2D datasets carry identity orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: DVector<f64>,
    #[serde(default)]
    pub orientation: UnitQuat,
}

impl Pose {
    pub fn new(position: DVector<f64>, orientation: UnitQuat) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn from_position(position: DVector<f64>) -> Self {
        Self {
            position,
            orientation: UnitQuat::identity(),
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }
}

/// `‖a.pos − b.pos‖ + w_rot · geodesic_angle(a.q, b.q)`.
pub fn pose_distance(a: &Pose, b: &Pose, w_rot: f64) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "pose_distance: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    Ok((&a.position - &b.position).norm() + w_rot * a.orientation.angle_to(&b.orientation))
}

/// Affine local coordinate system: `x ↦ A·x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFrame {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl TaskFrame {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.nrows(), a.ncols());
        assert_eq!(a.nrows(), b.len());
        Self { a, b }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            a: DMatrix::identity(dim, dim),
            b: DVector::zeros(dim),
        }
    }

    /// Rigid 2D frame from a rotation angle and an anchor.
    pub fn rigid_2d(angle: f64, anchor: DVector<f64>) -> Self {
        let (s, c) = angle.sin_cos();
        let a = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        Self { a, b: anchor }
    }

    /// Rigid 3D frame from an orientation and an anchor.
    pub fn rigid_3d(orientation: &UnitQuat, anchor: Vector3<f64>) -> Self {
        let r = orientation.rotation_matrix();
        let a = DMatrix::from_fn(3, 3, |i, j| r[(i, j)]);
        Self {
            a,
            b: DVector::from_column_slice(anchor.as_slice()),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// True when `AᵀA = I` within 1e-9.
    pub fn is_rigid(&self) -> bool {
        let gram = self.a.transpose() * &self.a;
        let eye = DMatrix::identity(self.dim(), self.dim());
        (gram - eye).amax() < 1e-9
    }

    /// Rotation of the frame as a quaternion, when the frame is 3D and rigid.
    pub fn rotation_quat(&self) -> Option<UnitQuat> {
        if self.dim() != 3 || !self.is_rigid() {
            return None;
        }
        let m = Matrix3::from_fn(|i, j| self.a[(i, j)]);
        Some(UnitQuat::from_rotation_matrix(&m))
    }

    pub fn apply_point(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.a * p + &self.b
    }

    /// Applies the frame to a pose: position through the affine map,
    /// orientation composed with the frame rotation when one exists.
    pub fn apply(&self, p: &Pose) -> Result<Pose> {
        if p.dim() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "frame dim {} vs pose dim {}",
                self.dim(),
                p.dim()
            )));
        }
        let position = self.apply_point(&p.position);
        let orientation = match self.rotation_quat() {
            Some(r) => r.compose(&p.orientation),
            None => p.orientation,
        };
        Ok(Pose {
            position,
            orientation,
        })
    }

    pub fn invert(&self) -> Result<TaskFrame> {
        let inv = self
            .a
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("task frame linear map not invertible".into()))?;
        let b = -(&inv * &self.b);
        Ok(TaskFrame { a: inv, b })
    }

    /// Anchor point of the frame (image of the local origin).
    pub fn anchor(&self) -> &DVector<f64> {
        &self.b
    }
}

/// Time-stamped pose sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrajectory {
    pub times: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl PoseTrajectory {
    pub fn new(times: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if times.len() != poses.len() {
            return Err(Error::InvalidArgument(
                "trajectory times and poses differ in length".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "trajectory times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, poses })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.poses.first().map(|p| p.dim()).unwrap_or(0)
    }

    pub fn positions(&self) -> Vec<DVector<f64>> {
        self.poses.iter().map(|p| p.position.clone()).collect()
    }

    pub fn start(&self) -> &Pose {
        &self.poses[0]
    }

    pub fn end(&self) -> &Pose {
        self.poses.last().expect("non-empty trajectory")
    }

    /// Rescales timestamps so the first maps to exactly 0 and the last to
    /// exactly 1.
    pub fn time_normalized(&self) -> Self {
        let t0 = self.times[0];
        let t1 = *self.times.last().expect("non-empty trajectory");
        let span = t1 - t0;
        let n = self.times.len();
        let times = self
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                if i == 0 {
                    0.0
                } else if i == n - 1 {
                    1.0
                } else {
                    (t - t0) / span
                }
            })
            .collect();
        Self {
            times,
            poses: self.poses.clone(),
        }
    }
}
