//! Independent oracles and scenario generators shared by the integration
//! tests and the acceptance suite.
#![allow(dead_code)]

use std::f64::consts::PI;

use handover_core::grasp::*;
use handover_core::kinematics::*;
use handover_core::perception::*;
use handover_core::se3::{geodesic_angle, Pose, Quat, Vec3};
use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Chain of 4×4 homogeneous DH matrices written out element by element.
pub fn oracle_fk(model: &ArmModel, q: &[f64]) -> Matrix4<f64> {
    let mut t = Matrix4::<f64>::identity();
    for (j, qi) in model.joints().iter().zip(q) {
        let th = qi + j.theta_offset;
        let (ct, st) = (th.cos(), th.sin());
        let (ca, sa) = (j.alpha.cos(), j.alpha.sin());
        let link = match model.convention() {
            DhConvention::Standard => Matrix4::new(
                ct, -st * ca, st * sa, j.a * ct,
                st, ct * ca, -ct * sa, j.a * st,
                0.0, sa, ca, j.d,
                0.0, 0.0, 0.0, 1.0,
            ),
            DhConvention::Modified => Matrix4::new(
                ct, -st, 0.0, j.a,
                st * ca, ct * ca, -sa, -sa * j.d,
                st * sa, ct * sa, ca, ca * j.d,
                0.0, 0.0, 0.0, 1.0,
            ),
        };
        t *= link;
    }
    t * model.flange_to_grasp().to_homogeneous()
}

pub fn random_joints(model: &ArmModel, rng: &mut ChaCha8Rng) -> JointVector {
    JointVector::from_iterator(model.joints().iter().map(|j| rng.gen_range(j.lower..j.upper)))
}


/// Central differences of fk: linear part from positions, angular part from
/// the rotation-matrix derivative (skew part of Ṙ Rᵀ).
pub fn finite_difference_jacobian(m: &ArmModel, q: &JointVector, h: f64) -> Vec<Vector6<f64>> {
    (0..DOF)
        .map(|i| {
            let mut qp = *q;
            let mut qm = *q;
            qp[i] += h;
            qm[i] -= h;
            let tp = oracle_fk(m, qp.as_slice());
            let tm = oracle_fk(m, qm.as_slice());
            let t0 = oracle_fk(m, q.as_slice());
            let dp = (tp.fixed_view::<3, 1>(0, 3) - tm.fixed_view::<3, 1>(0, 3)) / (2.0 * h);
            let dr = (tp.fixed_view::<3, 3>(0, 0) - tm.fixed_view::<3, 3>(0, 0)) / (2.0 * h);
            let w = dr * t0.fixed_view::<3, 3>(0, 0).transpose();
            Vector6::new(dp[0], dp[1], dp[2], w[(2, 1)], w[(0, 2)], w[(1, 0)])
        })
        .collect()
}


pub fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Random reachable targets from perturbed home configurations.
pub fn servo_targets(m: &ArmModel, n: usize, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let dq = JointVector::from_fn(|_, _| rng.gen_range(-0.5..0.5));
            m.forward(&m.clamp_to_limits(&(m.home() + dq)))
        })
        .collect()
}


pub const FACE_NORMALS: [[f64; 3]; 6] =
    [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]];

pub fn normal(f: usize) -> Vector3<f64> {
    Vector3::from(FACE_NORMALS[f])
}

/// Edge table rebuilt from scratch: every pair of faces that are neither
/// equal nor opposite, in lexicographic order.
pub fn edge_table() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for a in 0..6 {
        for b in a + 1..6 {
            if normal(a).dot(&normal(b)).abs() < 0.5 {
                out.push((a, b));
            }
        }
    }
    out
}

pub fn cube() -> CubeModel {
    CubeModel::default()
}

pub fn camera(pose: Pose) -> CameraModel {
    CameraModel { pose, fov_half_angle: 0.6, max_range: 1.5, max_incidence: 70f64.to_radians() }
}

/// Rotation angle of a 3×3 matrix without going through quaternions.
pub fn matrix_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

pub fn rot(m: &Matrix4<f64>) -> Matrix3<f64> {
    m.fixed_view::<3, 3>(0, 0).into_owned()
}

/// Brute-force selection over all 48 candidates, using homogeneous
/// matrices. Returns the selected id or `None` when nothing is feasible.
#[allow(clippy::too_many_arguments)]
pub fn oracle(
    cands: &[GraspCandidate],
    cube_edge: f64,
    cube_pose: &Pose,
    cam: &CameraModel,
    prev_parent: Option<(GraspKind, usize)>,
    arm: &ArmModel,
    bias: f64,
    max_angle: f64,
) -> Option<usize> {
    let t_cube = cube_pose.to_homogeneous();
    let t_cam = cam.pose.to_homogeneous();
    let fwd: Vector3<f64> = t_cam.fixed_view::<3, 1>(0, 2).into_owned();
    let edges = edge_table();
    let h = cube_edge / 2.0;
    let parent_center = |kind: GraspKind, idx: usize| -> Vector3<f64> {
        let local = match kind {
            GraspKind::Face => normal(idx) * h,
            GraspKind::Edge => (normal(edges[idx].0) + normal(edges[idx].1)) * h,
        };
        (t_cube * Vector4::new(local.x, local.y, local.z, 1.0)).xyz()
    };
    let center = t_cube.fixed_view::<3, 1>(0, 3).into_owned();

    struct Scored {
        id: usize,
        order: usize,
        height: f64,
        approach: f64,
        full: f64,
        reachable: bool,
    }
    let mut scored = Vec::new();
    for c in cands {
        let w = t_cube * c.pose.to_homogeneous();
        let p = w.fixed_view::<3, 1>(0, 3).into_owned();
        let to_center = center - p;
        // centre rule
        let ang = to_center.cross(&fwd).norm().atan2(to_center.dot(&fwd));
        if to_center.norm() > 0.0 && ang >= max_angle {
            continue;
        }
        let mut height = parent_center(c.kind, c.parent).z;
        if prev_parent == Some((c.kind, c.parent)) {
            height += bias;
        }
        let order = match c.kind {
            GraspKind::Face => c.parent,
            GraspKind::Edge => 6 + c.parent,
        };
        let approach_axis: Vector3<f64> = w.fixed_view::<3, 1>(0, 2).into_owned();
        let approach = approach_axis.cross(&fwd).norm().atan2(approach_axis.dot(&fwd));
        let full = matrix_angle(&(rot(&w).transpose() * rot(&t_cam)));
        // reachability is a black box here; an iterative solver can flip on
        // last-bit differences in its target, so it gets the composed pose
        let world = cube_pose.compose(&c.pose);
        assert!((world.to_homogeneous() - w).amax() < 1e-12);
        scored.push(Scored { id: c.id, order, height, approach, full, reachable: is_reachable(arm, &world) });
    }
    let tol = 1e-9;
    let cmp = |a: &Scored, b: &Scored| {
        if (a.height - b.height).abs() > tol {
            return b.height.total_cmp(&a.height);
        }
        if a.order != b.order {
            return a.order.cmp(&b.order);
        }
        if (a.approach - b.approach).abs() > tol {
            return a.approach.total_cmp(&b.approach);
        }
        if (a.full - b.full).abs() > tol {
            return a.full.total_cmp(&b.full);
        }
        a.id.cmp(&b.id)
    };
    // a parent only counts if one of its candidates is reachable
    let mut feasible: Vec<Scored> = scored.into_iter().filter(|s| s.reachable).collect();
    feasible.sort_by(cmp);
    feasible.first().map(|s| s.id)
}

pub fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
    let v = Vector4::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    UnitQuaternion::from_quaternion(nalgebra::Quaternion::from_vector(v))
}

/// A cube somewhere in front of the arm and a camera looking roughly at it.
pub fn random_scene(rng: &mut ChaCha8Rng) -> (Pose, CameraModel) {
    let cube_pose = Pose::new(
        Vec3::new(rng.gen_range(0.35..0.75), rng.gen_range(-0.3..0.3), rng.gen_range(0.1..0.6)),
        if rng.gen_bool(0.2) { UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.gen_range(-PI..PI)) } else { random_quat(rng) },
    );
    let dir = Vec3::new(rng.gen_range(-1.0..0.2), rng.gen_range(-0.6..0.6), rng.gen_range(0.2..1.0)).normalize();
    let cam_pos = cube_pose.position + dir * rng.gen_range(0.2..0.6);
    let jitter = Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2));
    let fwd = (cube_pose.position - cam_pos).normalize() + jitter;
    let finger = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let finger = if finger.cross(&fwd).norm() < 1e-3 { Vec3::x() } else { finger };
    (cube_pose, camera(Pose::new(cam_pos, frame_from_approach(&fwd, &finger))))
}

pub fn prev_on(cands: &[GraspCandidate], id: usize) -> GraspSelection {
    GraspSelection {
        candidate_id: id,
        parent: cands[id].parent_key(),
        world_pose: Pose::identity(),
        parent_z: 0.0,
        frozen: false,
    }
}


/// Camera 40 cm in front of the cube, looking along +x and level.
pub fn level_scene() -> (Pose, CameraModel) {
    let cube_pose = Pose::from_translation(0.55, 0.0, 0.3);
    let fwd = Vec3::x();
    let cam = camera(Pose::new(Vec3::new(0.15, 0.0, 0.3), frame_from_approach(&fwd, &Vec3::z())));
    (cube_pose, cam)
}


/// Parent changes over `frames` noisy estimates of a level cube.
pub fn parent_changes(bias: f64, frames: usize, seed: u64) -> usize {
    use handover_core::perception::{fuse_observations, observe_marker, visible_markers, NoiseModel};
    let cm = cube();
    let cands = enumerate_grasps(&cm, 0.02);
    let arm = ArmModel::panda();
    let params = GraspParams { bias, ..GraspParams::default() };
    let noise = NoiseModel { position_sigma: 0.002, angle_sigma: 1f64.to_radians() };
    let (cube_pose, _) = level_scene();
    // a camera above and in front, looking down at the cube
    let eye = Vec3::new(0.25, 0.0, 0.6);
    let cam = camera(Pose::new(eye, frame_from_approach(&(cube_pose.position - eye), &Vec3::x())));
    let visible = visible_markers(&cm, &cube_pose, &cam);
    assert!(visible.len() >= 2, "{visible:?}");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev: Option<GraspSelection> = None;
    let mut changes = 0;
    for _ in 0..frames {
        let obs: Vec<_> = visible
            .iter()
            .map(|&id| observe_marker(id, &cube_pose.compose(cm.marker_pose(id)), &cam, &noise, &mut rng))
            .collect();
        let est = fuse_observations(&cm, &obs).unwrap();
        let sel = select_grasp(&cands, &cm, &est, &cam, prev.as_ref(), &arm, &params).unwrap();
        if prev.is_some_and(|p| p.parent != sel.parent) {
            changes += 1;
        }
        prev = Some(sel);
    }
    changes
}


pub fn camera_looking(from: Vec3, at: Vec3, fov: f64) -> CameraModel {
    let z = (at - from).normalize();
    let x = handover_core::se3::any_perpendicular(&z).normalize();
    let y = z.cross(&x);
    CameraModel {
        pose: Pose::new(from, handover_core::se3::quat_from_axes(&x, &y, &z)),
        fov_half_angle: fov,
        max_range: 1.5,
        max_incidence: 70f64.to_radians(),
    }
}

pub fn random_cube_pose(rng: &mut ChaCha8Rng) -> Pose {
    Pose::new(Vec3::new(rng.gen_range(0.3..0.8), rng.gen_range(-0.3..0.3), rng.gen_range(0.1..0.6)), random_quat(rng))
}

pub fn observe_all(cube: &CubeModel, pose: &Pose, ids: &[usize], cam: &CameraModel, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Vec<MarkerObservation> {
    ids.iter().map(|&id| observe_marker(id, &pose.compose(cube.marker_pose(id)), cam, noise, rng)).collect()
}


/// Every non-empty subset of the visible markers fuses back to the truth.
pub fn zero_noise_fusion_error(poses: usize, seed: u64) -> f64 {
    let cube = CubeModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < poses {
        let pose = random_cube_pose(&mut rng);
        let eye = pose.position + Vec3::new(rng.gen_range(-0.5..-0.2), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..0.4));
        let cam = camera_looking(eye, pose.position, 0.6);
        let visible = visible_markers(&cube, &pose, &cam);
        if visible.is_empty() {
            continue;
        }
        checked += 1;
        let obs = observe_all(&cube, &pose, &visible, &cam, &NoiseModel::zero(), &mut rng);
        for mask in 1u32..(1 << obs.len()) {
            let subset: Vec<MarkerObservation> =
                obs.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, o)| *o).collect();
            let fused = fuse_observations(&cube, &subset).unwrap();
            worst = worst.max(fused.position_distance(&pose)).max(geodesic_angle(&fused.orientation, &pose.orientation));
        }
    }
    worst
}


/// Largest |analytic − finite difference| Jacobian entry over `n` random
/// configurations.
pub fn jacobian_fd_error(n: usize, seed: u64) -> f64 {
    let m = ArmModel::panda();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let q = random_joints(&m, &mut rng);
        let jac = jacobian(&m, q.as_slice()).unwrap();
        for (i, col) in finite_difference_jacobian(&m, &q, 1e-6).iter().enumerate() {
            worst = worst.max((jac.column(i) - col).amax());
        }
    }
    worst
}

/// Servo from home to `n` reachable targets at 100 Hz. Returns the worst
/// deviation from the straight segment and the worst step count; a rollout
/// that fails to converge within `max_steps` reports `max_steps + 1`.
pub fn servo_rollouts(n: usize, seed: u64, max_steps: usize) -> (f64, usize) {
    let m = ArmModel::panda();
    let gains = ServoGains::default();
    let dt = 0.01;
    let start = m.forward(&m.home());
    let mut worst_dev: f64 = 0.0;
    let mut worst_steps = 0;
    for target in servo_targets(&m, n, seed) {
        let mut js = JointState::at_rest(m.home());
        let mut steps = 0;
        loop {
            let p = m.forward(&js.positions);
            worst_dev = worst_dev.max(segment_distance(&p.position, &start.position, &target.position));
            if p.position_distance(&target) < 1e-3 && geodesic_angle(&p.orientation, &target.orientation) < 1f64.to_radians() {
                break;
            }
            if steps > max_steps {
                break;
            }
            js = resolved_rate_step(&m, &js, &target, dt, &gains).unwrap();
            steps += 1;
        }
        worst_steps = worst_steps.max(steps);
    }
    (worst_dev, worst_steps)
}

pub struct OracleRun {
    pub scenes: usize,
    pub mismatches: Vec<String>,
    pub infeasible: usize,
}

/// Compares `select_grasp` with the brute-force oracle on random scenes.
pub fn selection_vs_oracle(scenes: usize, seed: u64) -> OracleRun {
    let cm = cube();
    let cands = enumerate_grasps(&cm, 0.02);
    let arm = ArmModel::panda();
    let params = GraspParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut run = OracleRun { scenes, mismatches: Vec::new(), infeasible: 0 };
    for scene in 0..scenes {
        let (cube_pose, cam) = random_scene(&mut rng);
        let prev = rng.gen_bool(0.5).then(|| prev_on(&cands, rng.gen_range(0..48)));
        let ours = select_grasp(&cands, &cm, &cube_pose, &cam, prev.as_ref(), &arm, &params);
        let expected = oracle(
            &cands,
            cm.edge(),
            &cube_pose,
            &cam,
            prev.map(|p| (p.parent.kind, p.parent.index)),
            &arm,
            params.bias,
            params.max_center_angle,
        );
        match (&ours, expected) {
            (Ok(sel), Some(id)) if sel.candidate_id == id => {
                let w = cube_pose.compose(&cands[id].pose);
                let on_pose = sel.world_pose.position_distance(&w) < 1e-12;
                let rule1 = passes_center_rule(&cands[id], &cube_pose, &cam.forward(), params.max_center_angle);
                if !(on_pose && rule1) {
                    run.mismatches.push(format!("scene {scene}: pose or rule-1 check failed"));
                }
            }
            (Err(GraspError::NoFeasibleGrasp), None) => run.infeasible += 1,
            _ => run.mismatches.push(format!("scene {scene}: ours {ours:?}, oracle {expected:?}")),
        }
    }
    run
}
