//! Rigid transforms, twists and the quaternion helpers shared by every
//! other module.
//!
//! Quaternions are stored as nalgebra [`UnitQuaternion`]s. On the wire and in
//! logs a [`Pose`] is `{"position": [x, y, z], "orientation": [w, x, y, z]}`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// A rigid transform: `x_world = orientation * x_local + position`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    orientation: [f64; 4],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFormatError(pub String);

impl fmt::Display for PoseFormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = PoseFormatError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        let position = Vec3::from(r.position);
        let [w, x, y, z] = r.orientation;
        let q = Quaternion::new(w, x, y, z);
        if !position.iter().all(|v| v.is_finite()) || !q.coords.iter().all(|v| v.is_finite()) {
            return Err(PoseFormatError("pose contains non-finite values".into()));
        }
        let norm = q.norm();
        // Exactly-unit input is kept bit-for-bit so logs round-trip losslessly.
        let orientation = if (norm - 1.0).abs() < 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else if norm > 1e-6 {
            UnitQuaternion::new_normalize(q)
        } else {
            return Err(PoseFormatError("orientation quaternion has zero norm".into()));
        };
        Ok(Pose { position, orientation })
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(position: Vec3, orientation: Quat) -> Self {
        Pose { position, orientation }
    }

    pub fn identity() -> Self {
        Pose { position: Vec3::zeros(), orientation: Quat::identity() }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose { position: Vec3::new(x, y, z), orientation: Quat::identity() }
    }

    pub fn from_rotation(orientation: Quat) -> Self {
        Pose { position: Vec3::zeros(), orientation }
    }

    /// `self ∘ other`: express `other` (given in this frame) in the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.orientation * other.position,
            orientation: renormalize(self.orientation * other.orientation),
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.orientation.inverse();
        Pose { position: -(inv * self.position), orientation: inv }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    pub fn rotate_vector(&self, v: &Vec3) -> Vec3 {
        self.orientation * v
    }

    pub fn x_axis(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    pub fn y_axis(&self) -> Vec3 {
        self.orientation * Vec3::y()
    }

    pub fn z_axis(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    pub fn position_distance(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }

    /// Geodesic angle between the two orientations, in `[0, π]`.
    pub fn angle_to(&self, other: &Pose) -> f64 {
        geodesic_angle(&self.orientation, &other.orientation)
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.orientation.to_rotation_matrix().matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl<'a> Mul<&'a Pose> for &'a Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// End-effector velocity: linear (m/s) then angular (rad/s), world frame.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Twist {
            linear: Vec3::new(v[0], v[1], v[2]),
            angular: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|v| v.is_finite())
    }
}

fn renormalize(q: Quat) -> Quat {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Rotation vector (axis × angle) of `q`, taking the short way round.
pub fn rotation_log(q: &Quat) -> Vec3 {
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < 1e-15 {
        return v * 2.0;
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

pub fn rotation_exp(v: &Vec3) -> Quat {
    UnitQuaternion::from_scaled_axis(*v)
}

/// Angle of the relative rotation between `a` and `b`, in `[0, π]`.
pub fn geodesic_angle(a: &Quat, b: &Quat) -> f64 {
    let rel = a.inverse() * b;
    let s = rel.imag().norm();
    2.0 * s.atan2(rel.w.abs())
}

/// Intrinsic X-Y-Z Euler angles: rotate about x, then the new y, then the new z.
pub fn euler_xyz_intrinsic(rx: f64, ry: f64, rz: f64) -> Quat {
    let qx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rx);
    let qy = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ry);
    let qz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rz);
    qx * qy * qz
}

/// Builds the rotation whose columns are the given frame axes.
pub fn quat_from_axes(x: &Vec3, y: &Vec3, z: &Vec3) -> Quat {
    let m = Matrix3::from_columns(&[*x, *y, *z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Spherical interpolation along the shorter arc. `t = 0` and `t = 1` return
/// the endpoints exactly.
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    if t <= 0.0 {
        return *a;
    }
    if t >= 1.0 {
        return *b;
    }
    let mut bq = *b.quaternion();
    let mut dot = a.quaternion().dot(&bq);
    if dot < 0.0 {
        bq = -bq;
        dot = -dot;
    }
    if dot > 1.0 - 1e-12 {
        let q = a.quaternion() * (1.0 - t) + bq * t;
        return UnitQuaternion::new_normalize(q);
    }
    let theta = dot.min(1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / sin_theta;
    let wb = (t * theta).sin() / sin_theta;
    UnitQuaternion::new_normalize(a.quaternion() * wa + bq * wb)
}

/// Weighted quaternion mean: the eigenvector of `Σ wᵢ qᵢ qᵢᵀ` with the largest
/// eigenvalue. Sign is fixed so the scalar part is non-negative.
///
/// Returns `None` when the inputs are empty or the weights sum to zero.
pub fn average_quaternions(items: &[(f64, Quat)]) -> Option<Quat> {
    if items.is_empty() || items.iter().map(|(w, _)| *w).sum::<f64>() <= 0.0 {
        return None;
    }
    let mut m = Matrix4::<f64>::zeros();
    for (w, q) in items {
        let c = q.coords;
        m += c * c.transpose() * *w;
    }
    let eig = m.symmetric_eigen();
    let mut best = 0;
    for i in 1..4 {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut v = eig.eigenvectors.column(best).into_owned();
    // coords are [i, j, k, w]
    let first_nonzero = [3usize, 0, 1, 2]
        .iter()
        .map(|&k| v[k])
        .find(|c| c.abs() > 1e-15)
        .unwrap_or(1.0);
    if first_nonzero < 0.0 {
        v = -v;
    }
    Some(UnitQuaternion::new_normalize(Quaternion::from(v)))
}

/// Weighted pose mean: arithmetic mean of positions, eigenvector mean of
/// orientations.
pub fn average_poses(items: &[(f64, Pose)]) -> Option<Pose> {
    let total: f64 = items.iter().map(|(w, _)| *w).sum();
    if items.is_empty() || total <= 0.0 {
        return None;
    }
    let position = items
        .iter()
        .fold(Vec3::zeros(), |acc, (w, p)| acc + p.position * *w)
        / total;
    let quats: Vec<(f64, Quat)> = items.iter().map(|(w, p)| (*w, p.orientation)).collect();
    let orientation = average_quaternions(&quats)?;
    Some(Pose { position, orientation })
}

/// A unit vector perpendicular to `v` (which must be non-zero).
pub fn any_perpendicular(v: &Vec3) -> Vec3 {
    let a = v.abs();
    let reference = if a.x <= a.y && a.x <= a.z {
        Vec3::x()
    } else if a.y <= a.z {
        Vec3::y()
    } else {
        Vec3::z()
    };
    v.cross(&reference).normalize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn quat_chordal(a: &Quat, b: &Quat) -> f64 {
        let d1 = (a.coords - b.coords).norm();
        let d2 = (a.coords + b.coords).norm();
        d1.min(d2)
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let p = Pose::new(Vec3::new(0.3, -1.2, 2.0), euler_xyz_intrinsic(0.4, -1.1, 2.5));
        let id = p.compose(&p.inverse());
        assert!(id.position.norm() < 1e-9);
        assert!(quat_chordal(&id.orientation, &Quat::identity()) < 1e-9);
        let id2 = p.inverse().compose(&p);
        assert!(id2.position.norm() < 1e-9);
    }

    #[test]
    fn log_exp_round_trip() {
        let v = Vec3::new(0.3, -0.2, 1.4);
        let back = rotation_log(&rotation_exp(&v));
        assert!((back - v).norm() < 1e-12);
        assert_eq!(rotation_log(&Quat::identity()), Vec3::zeros());
    }

    #[test]
    fn log_takes_short_way() {
        let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1.5 * PI);
        let v = rotation_log(&q);
        assert!((v.norm() - 0.5 * PI).abs() < 1e-12);
        assert!(v.z < 0.0);
    }

    #[test]
    fn geodesic_angle_matches_axis_angle() {
        let a = euler_xyz_intrinsic(0.1, 0.2, 0.3);
        let b = a * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), 0.7);
        assert!((geodesic_angle(&a, &b) - 0.7).abs() < 1e-12);
        // sign of the quaternion does not matter
        let neg = UnitQuaternion::new_unchecked(-b.into_inner());
        assert!((geodesic_angle(&a, &neg) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn euler_order_is_intrinsic_xyz() {
        let q = euler_xyz_intrinsic(FRAC_PI_2, FRAC_PI_2, 0.0);
        // Rx(90) then about the new y (which is world z) by 90.
        let x = q * Vec3::x();
        assert!((x - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn slerp_endpoints_exact() {
        let a = euler_xyz_intrinsic(0.1, 0.2, 0.3);
        let b = euler_xyz_intrinsic(-0.4, 0.5, 1.0);
        assert_eq!(slerp(&a, &b, 0.0), a);
        assert_eq!(slerp(&a, &b, 1.0), b);
        let mid = slerp(&a, &b, 0.5);
        assert!((geodesic_angle(&a, &mid) - geodesic_angle(&mid, &b)).abs() < 1e-12);
    }

    #[test]
    fn average_of_identical_is_exact() {
        let q = euler_xyz_intrinsic(0.9, -0.3, 2.2);
        let avg = average_quaternions(&[(0.5, q), (1.0, q), (0.2, q)]).unwrap();
        assert!(quat_chordal(&avg, &q) < 1e-12);
        assert!(average_quaternions(&[]).is_none());
    }

    #[test]
    fn average_handles_sign_flips() {
        let q = euler_xyz_intrinsic(0.2, 0.1, -0.5);
        let neg = UnitQuaternion::new_unchecked(-q.into_inner());
        let avg = average_quaternions(&[(1.0, q), (1.0, neg)]).unwrap();
        assert!(geodesic_angle(&avg, &q) < 1e-9);
    }

    #[test]
    fn pose_json_round_trip_is_lossless() {
        let p = Pose::new(Vec3::new(0.1, 1.0 / 3.0, -2.5e-7), euler_xyz_intrinsic(0.3, 0.2, 0.1));
        let s = serde_json::to_string(&p).unwrap();
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn pose_json_rejects_zero_quaternion() {
        let r: Result<Pose, _> =
            serde_json::from_str(r#"{"position":[0,0,0],"orientation":[0,0,0,0]}"#);
        assert!(r.is_err());
    }

    #[test]
    fn homogeneous_matches_transform_point() {
        let p = Pose::new(Vec3::new(1.0, 2.0, 3.0), euler_xyz_intrinsic(0.3, -0.6, 0.9));
        let x = Vec3::new(-0.2, 0.5, 0.7);
        let h = p.to_homogeneous() * x.push(1.0);
        assert!((h.xyz() - p.transform_point(&x)).norm() < 1e-12);
    }
}
