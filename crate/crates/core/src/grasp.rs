//! The 48 predefined cube grasps and the per-frame selection rules.
//!
//! Ids: face `f` owns candidates `4f..4f+4`, edge `e` owns `24+2e` and
//! `25+2e`. Faces follow the marker order (+x, −x, +y, −y, +z, −z); edges are
//! listed in [`EDGES`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{frame_from_approach, is_reachable, ArmModel};
use crate::perception::{face_normal, CameraModel, CubeModel, FACE_COUNT};
use crate::se3::{geodesic_angle, Pose, Vec3};

pub const CANDIDATE_COUNT: usize = 48;
pub const EDGE_COUNT: usize = 12;
const TIE: f64 = 1e-9;

/// The two faces meeting at each edge.
pub const EDGES: [(usize, usize); EDGE_COUNT] = [
    (0, 2), (0, 3), (0, 4), (0, 5),
    (1, 2), (1, 3), (1, 4), (1, 5),
    (2, 4), (2, 5), (3, 4), (3, 5),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraspError {
    #[error("no feasible grasp: every candidate was eliminated")]
    NoFeasibleGrasp,
    #[error("selection {0} is already frozen")]
    AlreadyFrozen(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspKind {
    Face,
    Edge,
}

/// A face or an edge. Ordered faces first, then by index; that order breaks
/// height ties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Parent {
    pub kind: GraspKind,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    pub id: usize,
    pub kind: GraspKind,
    pub parent: usize,
    /// Gripper grasp frame in the cube frame; +z points into the cube.
    pub pose: Pose,
}

impl GraspCandidate {
    pub fn parent_key(&self) -> Parent {
        Parent { kind: self.kind, index: self.parent }
    }
}

/// Centre of a face or edge midpoint in the cube frame.
pub fn parent_center(cube: &CubeModel, parent: Parent) -> Vec3 {
    let h = cube.edge() / 2.0;
    match parent.kind {
        GraspKind::Face => face_normal(parent.index) * h,
        GraspKind::Edge => {
            let (a, b) = EDGES[parent.index];
            (face_normal(a) + face_normal(b)) * h
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraspParams {
    /// Height bonus for the previous selection's parent (m).
    pub bias: f64,
    /// Rule-1 cut-off between the centre-pointing vector and camera forward.
    pub max_center_angle: f64,
    /// How far inside the face or edge the grasp frame sits (m).
    pub depth: f64,
}

impl Default for GraspParams {
    fn default() -> Self {
        GraspParams { bias: 0.02, max_center_angle: 120f64.to_radians(), depth: 0.02 }
    }
}

/// All 48 candidates, ordered by id.
pub fn enumerate_grasps(cube: &CubeModel, depth: f64) -> Vec<GraspCandidate> {
    let h = cube.edge() / 2.0;
    let mut out = Vec::with_capacity(CANDIDATE_COUNT);
    for f in 0..FACE_COUNT {
        let n = face_normal(f);
        let approach = -n;
        let m = cube.marker_pose(f);
        // successive quarter turns about the approach axis
        let fingers = [m.x_axis(), -m.y_axis(), -m.x_axis(), m.y_axis()];
        for (k, y) in fingers.iter().enumerate() {
            out.push(GraspCandidate {
                id: 4 * f + k,
                kind: GraspKind::Face,
                parent: f,
                pose: Pose::new(n * (h - depth), frame_from_approach(&approach, y)),
            });
        }
    }
    for (e, (a, b)) in EDGES.iter().enumerate() {
        let bisector = (face_normal(*a) + face_normal(*b)).normalize();
        let mid = (face_normal(*a) + face_normal(*b)) * h;
        let along = face_normal(*a).cross(&face_normal(*b));
        for (k, y) in [along, -along].iter().enumerate() {
            out.push(GraspCandidate {
                id: 24 + 2 * e + k,
                kind: GraspKind::Edge,
                parent: e,
                pose: Pose::new(mid - bisector * depth, frame_from_approach(&-bisector, y)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspSelection {
    pub candidate_id: usize,
    pub parent: Parent,
    /// Grasp frame in the world.
    pub world_pose: Pose,
    /// World z of the parent centre, without any bias.
    pub parent_z: f64,
    pub frozen: bool,
}

/// Centre rule: the vector from the grasp position to the cube centre must make
/// less than `max_angle` with the camera forward axis.
pub fn passes_center_rule(cand: &GraspCandidate, cube_pose: &Pose, cam_forward: &Vec3, max_angle: f64) -> bool {
    let to_center = cube_pose.rotate_vector(&(-cand.pose.position));
    let n = to_center.norm();
    if n == 0.0 {
        return true;
    }
    let cos = (to_center.dot(cam_forward) / (n * cam_forward.norm())).clamp(-1.0, 1.0);
    cos.acos() < max_angle
}

/// Rule-4 key: angle between the grasp approach and camera forward, then the
/// full orientation difference to the camera frame.
pub fn camera_alignment(world_pose: &Pose, cam: &CameraModel) -> (f64, f64) {
    // atan2 keeps near-parallel axes well conditioned, so shared approach
    // axes still tie within TIE
    let (a, f) = (world_pose.z_axis(), cam.forward());
    (a.cross(&f).norm().atan2(a.dot(&f)), geodesic_angle(&world_pose.orientation, &cam.pose.orientation))
}

/// Indices whose value is within [`TIE`] of the maximum (or minimum).
fn near_best(values: &[f64], maximize: bool) -> Vec<usize> {
    let best = values.iter().copied().fold(if maximize { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| {
        if maximize { acc.max(v) } else { acc.min(v) }
    });
    (0..values.len()).filter(|&i| (values[i] - best).abs() <= TIE).collect()
}

/// Picks one candidate for the current frame.
///
/// 1. drop candidates whose centre-pointing vector is ≥ `max_center_angle`
///    from the camera forward axis;
/// 2. rank parents by world z of their centre, `prev`'s parent gets `bias`;
/// 3. in rank order, keep the first parent with a reachable candidate;
/// 4. pick the candidate best aligned with the camera.
///
/// Ties within 1e-9 go to the lowest parent, then the lowest id.
pub fn select_grasp(
    candidates: &[GraspCandidate],
    cube: &CubeModel,
    cube_pose: &Pose,
    cam: &CameraModel,
    prev: Option<&GraspSelection>,
    arm: &ArmModel,
    params: &GraspParams,
) -> Result<GraspSelection, GraspError> {
    if !cube_pose.is_finite() {
        return Err(GraspError::InvalidInput("cube pose is not finite".into()));
    }
    let fwd = cam.forward();
    let survivors: Vec<&GraspCandidate> = candidates
        .iter()
        .filter(|c| passes_center_rule(c, cube_pose, &fwd, params.max_center_angle))
        .collect();

    let mut parents: Vec<(Parent, f64)> = Vec::new();
    for c in &survivors {
        let key = c.parent_key();
        if !parents.iter().any(|(p, _)| *p == key) {
            let z = cube_pose.transform_point(&parent_center(cube, key)).z;
            parents.push((key, z));
        }
    }
    let biased = |p: &Parent, z: f64| match prev {
        Some(s) if s.parent == *p => z + params.bias,
        _ => z,
    };
    // highest first; equal heights (within TIE) fall back to parent order
    let mut ranked: Vec<(Parent, f64, f64)> = parents.iter().map(|(p, z)| (*p, *z, biased(p, *z))).collect();
    ranked.sort_by_key(|r| r.0);
    let mut order = Vec::with_capacity(ranked.len());
    while !ranked.is_empty() {
        let scores: Vec<f64> = ranked.iter().map(|r| r.2).collect();
        let first = near_best(&scores, true)[0];
        order.push(ranked.remove(first));
    }

    for (parent, z, _) in order {
        let feasible: Vec<(&GraspCandidate, Pose)> = survivors
            .iter()
            .filter(|c| c.parent_key() == parent)
            .map(|c| (*c, cube_pose.compose(&c.pose)))
            .filter(|(_, w)| is_reachable(arm, w))
            .collect();
        if feasible.is_empty() {
            continue;
        }
        let keys: Vec<(f64, f64)> = feasible.iter().map(|(_, w)| camera_alignment(w, cam)).collect();
        let primary: Vec<f64> = keys.iter().map(|k| k.0).collect();
        let tier1 = near_best(&primary, false);
        let secondary: Vec<f64> = tier1.iter().map(|&i| keys[i].1).collect();
        let tier2: Vec<usize> = near_best(&secondary, false).into_iter().map(|j| tier1[j]).collect();
        let pick = tier2.into_iter().min_by_key(|&i| feasible[i].0.id).expect("non-empty tier");
        let (c, w) = feasible[pick];
        return Ok(GraspSelection { candidate_id: c.id, parent, world_pose: w, parent_z: z, frozen: false });
    }
    Err(GraspError::NoFeasibleGrasp)
}

/// Marks a selection as fixed for the rest of the handover.
pub fn freeze(sel: &GraspSelection) -> Result<GraspSelection, GraspError> {
    if sel.frozen {
        return Err(GraspError::AlreadyFrozen(sel.candidate_id));
    }
    Ok(GraspSelection { frozen: true, ..*sel })
}
