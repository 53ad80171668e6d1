use handover_core::artifact::*;
use handover_core::se3::{geodesic_angle, Pose, Vec3};
use nalgebra::{UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn stats(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn offset_magnitude_matches_the_configured_distribution() {
    let fwd = Vec3::new(0.3, -0.2, 0.9).normalize();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let samples: Vec<ErrorArtifact> = (0..10_000).map(|_| sample_error(&fwd, &ErrorParams::default(), &mut rng)).collect();
    let mags: Vec<f64> = samples.iter().map(|a| a.offset.norm()).collect();
    let (mean, std) = stats(&mags);
    assert!((0.099..=0.101).contains(&mean), "mean {mean}");
    assert!((0.009..=0.011).contains(&std), "std {std}");
    for axis in 0..3 {
        let m = samples.iter().map(|a| a.euler[axis].abs().to_degrees()).sum::<f64>() / samples.len() as f64;
        assert!((9.4..=10.6).contains(&m), "axis {axis}: mean |euler| {m}°");
        // the sign is a fair coin
        let positive = samples.iter().filter(|a| a.euler[axis] > 0.0).count();
        assert!((4700..=5300).contains(&positive), "axis {axis}: {positive} positive");
    }
}

#[test]
fn offset_direction_covers_the_plane_uniformly() {
    let fwd = Vec3::z();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut bins = [0usize; 8];
    for _ in 0..8000 {
        let a = sample_error(&fwd, &ErrorParams::default(), &mut rng);
        let phi = a.offset.y.atan2(a.offset.x).rem_euclid(std::f64::consts::TAU);
        bins[(phi / (std::f64::consts::TAU / 8.0)) as usize % 8] += 1;
    }
    // each bin expects 1000 with std ≈ 30
    assert!(bins.iter().all(|&b| (880..=1120).contains(&b)), "{bins:?}");
}

#[test]
fn zero_artifact_leaves_the_pose_unchanged() {
    let p = Pose::new(Vec3::new(0.4, -0.1, 0.3), UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1));
    let q = apply_error(&p, &ErrorArtifact::zero());
    assert!(q.position_distance(&p) == 0.0);
    assert!(geodesic_angle(&q.orientation, &p.orientation) < 1e-15);
}

#[test]
fn pure_offset_moves_position_only() {
    let p = Pose::new(Vec3::new(0.4, -0.1, 0.3), UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1));
    let u = Vec3::new(1.0, 1.0, 0.0).normalize();
    let art = ErrorArtifact { offset: u * 0.1, euler: Vec3::zeros() };
    let q = apply_error(&p, &art);
    assert!(((q.position - p.position) - u * 0.1).norm() < 1e-15);
    assert!(geodesic_angle(&q.orientation, &p.orientation) < 1e-15);
}

#[test]
fn rotation_is_intrinsic_xyz() {
    let (rx, ry, rz) = (0.2, -0.4, 0.7);
    let art = ErrorArtifact { offset: Vec3::zeros(), euler: Vec3::new(rx, ry, rz) };
    let q = apply_error(&Pose::identity(), &art);
    let expected = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), rx)
        * UnitQuaternion::from_axis_angle(&Vector3::y_axis(), ry)
        * UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rz);
    assert!(geodesic_angle(&q.orientation, &expected) < 1e-12);
}

#[test]
fn sampling_is_deterministic() {
    let fwd = Vec3::x();
    let a = sample_error(&fwd, &ErrorParams::default(), &mut ChaCha8Rng::seed_from_u64(5));
    let b = sample_error(&fwd, &ErrorParams::default(), &mut ChaCha8Rng::seed_from_u64(5));
    assert_eq!(a, b);
}

fn unit_vector() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-degenerate", |(x, y, z)| x * x + y * y + z * z > 1e-4)
        .prop_map(|(x, y, z)| Vec3::new(x, y, z).normalize())
}

proptest! {
    #[test]
    fn offset_is_perpendicular_to_the_camera(fwd in unit_vector(), seed in any::<u64>()) {
        let a = sample_error(&fwd, &ErrorParams::default(), &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(a.offset.dot(&fwd).abs() < 1e-9);
    }

    #[test]
    fn remove_inverts_apply(seed in any::<u64>(), fwd in unit_vector()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Pose::new(
            Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            UnitQuaternion::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0)),
        );
        let art = sample_error(&fwd, &ErrorParams::default(), &mut rng);
        let back = remove_error(&apply_error(&p, &art), &art);
        prop_assert!(back.position_distance(&p) < 1e-9);
        prop_assert!(geodesic_angle(&back.orientation, &p.orientation) < 1e-9);
    }
}
