//! The per-trial "faked error": a constant offset and rotation applied to the
//! estimated cube pose to mimic an inaccurate pose estimator.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::se3::{any_perpendicular, euler_xyz_intrinsic, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorParams {
    pub offset_mean: f64,
    pub offset_std: f64,
    /// Mean magnitude of each Euler offset (degrees).
    pub euler_mean_deg: f64,
    pub euler_std_deg: f64,
}

impl Default for ErrorParams {
    fn default() -> Self {
        ErrorParams { offset_mean: 0.10, offset_std: 0.01, euler_mean_deg: 10.0, euler_std_deg: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorArtifact {
    /// World-frame offset, perpendicular to the camera forward axis at sampling time.
    pub offset: Vec3,
    /// Intrinsic XYZ Euler offsets (rad).
    pub euler: Vec3,
}

impl ErrorArtifact {
    pub fn zero() -> Self {
        ErrorArtifact { offset: Vec3::zeros(), euler: Vec3::zeros() }
    }
}

/// Draws one artifact. Consumes exactly eight draws from `rng`: magnitude,
/// direction, then (magnitude, sign) for each Euler axis.
pub fn sample_error<R: Rng + ?Sized>(cam_forward: &Vec3, params: &ErrorParams, rng: &mut R) -> ErrorArtifact {
    let f = cam_forward.normalize();
    let u = any_perpendicular(&f).normalize();
    let v = f.cross(&u).normalize();
    let mag_dist = Normal::new(params.offset_mean, params.offset_std.max(0.0)).expect("finite offset params");
    let magnitude = mag_dist.sample(rng).max(0.0);
    let phi = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut dir = u * phi.cos() + v * phi.sin();
    // remove the rounding residual along f
    dir -= f * dir.dot(&f);
    let euler_dist = Normal::new(params.euler_mean_deg.to_radians(), params.euler_std_deg.max(0.0).to_radians())
        .expect("finite euler params");
    let mut euler = Vec3::zeros();
    for e in euler.iter_mut() {
        let m = euler_dist.sample(rng);
        *e = if rng.gen_bool(0.5) { m } else { -m };
    }
    ErrorArtifact { offset: dir * magnitude, euler }
}

/// `position += offset`, `orientation = orientation · R_xyz(euler)`.
pub fn apply_error(est: &Pose, art: &ErrorArtifact) -> Pose {
    let r = euler_xyz_intrinsic(art.euler.x, art.euler.y, art.euler.z);
    Pose::new(est.position + art.offset, est.orientation * r)
}

/// Inverse of [`apply_error`].
pub fn remove_error(corrupted: &Pose, art: &ErrorArtifact) -> Pose {
    let r = euler_xyz_intrinsic(art.euler.x, art.euler.y, art.euler.z);
    Pose::new(corrupted.position - art.offset, corrupted.orientation * r.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::geodesic_angle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_artifact_is_identity() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), euler_xyz_intrinsic(0.3, -0.2, 1.0));
        assert_eq!(apply_error(&p, &ErrorArtifact::zero()), p);
    }

    #[test]
    fn pure_offset_moves_position_only() {
        let p = Pose::new(Vec3::new(0.1, 0.2, 0.3), euler_xyz_intrinsic(0.3, -0.2, 1.0));
        let u = Vec3::new(0.0, 1.0, 0.0);
        let art = ErrorArtifact { offset: u * 0.1, euler: Vec3::zeros() };
        let c = apply_error(&p, &art);
        assert!(((c.position - p.position) - u * 0.1).norm() < 1e-15);
        assert_eq!(c.orientation, p.orientation);
    }

    #[test]
    fn offset_is_perpendicular_to_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Vec3::new(0.68, 0.1, -0.73).normalize();
        for _ in 0..1000 {
            let a = sample_error(&f, &ErrorParams::default(), &mut rng);
            assert!(a.offset.dot(&f).abs() < 1e-9);
        }
    }

    #[test]
    fn remove_inverts_apply() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Pose::new(Vec3::new(0.6, 0.0, 0.3), euler_xyz_intrinsic(0.1, 0.2, 0.3));
        let a = sample_error(&Vec3::x(), &ErrorParams::default(), &mut rng);
        let back = remove_error(&apply_error(&p, &a), &a);
        assert!(back.position_distance(&p) < 1e-9);
        assert!(geodesic_angle(&back.orientation, &p.orientation) < 1e-9);
    }
}
