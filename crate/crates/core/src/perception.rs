//! Simulated fiducial markers on the cube faces, pose fusion across markers
//! and the temporal filters that smooth the robot's belief about the cube.

use std::cmp::Ordering;
use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{average_poses, euler_xyz_intrinsic, quat_from_axes, slerp, Pose, Vec3};

pub const FACE_COUNT: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("no marker observations to fuse")]
    NoDetection,
    #[error("invalid cube: {0}")]
    InvalidCube(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
    #[error("filter alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
}

/// Outward normals of the six faces in the cube frame, in marker-id order:
/// +x, −x, +y, −y, +z, −z.
pub fn face_normal(face: usize) -> Vec3 {
    match face {
        0 => Vec3::x(),
        1 => -Vec3::x(),
        2 => Vec3::y(),
        3 => -Vec3::y(),
        4 => Vec3::z(),
        5 => -Vec3::z(),
        _ => panic!("face index {face} out of range"),
    }
}

/// Marker x and y axes for each face; z is the outward normal.
fn marker_axes(face: usize) -> (Vec3, Vec3) {
    match face {
        0 => (Vec3::y(), Vec3::z()),
        1 => (-Vec3::y(), Vec3::z()),
        2 => (-Vec3::x(), Vec3::z()),
        3 => (Vec3::x(), Vec3::z()),
        4 => (Vec3::x(), Vec3::y()),
        5 => (Vec3::x(), -Vec3::y()),
        _ => panic!("face index {face} out of range"),
    }
}

/// A cube with one marker centred on each face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CubeRepr", into = "CubeRepr")]
pub struct CubeModel {
    edge: f64,
    markers: [Pose; FACE_COUNT],
}

#[derive(Serialize, Deserialize)]
struct CubeRepr {
    edge: f64,
}

impl From<CubeModel> for CubeRepr {
    fn from(c: CubeModel) -> Self {
        CubeRepr { edge: c.edge }
    }
}

impl TryFrom<CubeRepr> for CubeModel {
    type Error = PerceptionError;
    fn try_from(r: CubeRepr) -> Result<Self, Self::Error> {
        CubeModel::new(r.edge)
    }
}

impl Default for CubeModel {
    fn default() -> Self {
        CubeModel::new(0.08).expect("default cube is valid")
    }
}

impl CubeModel {
    pub fn new(edge: f64) -> Result<Self, PerceptionError> {
        if !(edge.is_finite() && edge > 0.0) {
            return Err(PerceptionError::InvalidCube(format!("edge must be positive, got {edge}")));
        }
        let markers = std::array::from_fn(|f| {
            let (x, y) = marker_axes(f);
            let z = face_normal(f);
            Pose::new(z * (edge / 2.0), quat_from_axes(&x, &y, &z))
        });
        Ok(CubeModel { edge, markers })
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    /// Marker frame of `id` in the cube frame.
    pub fn marker_pose(&self, id: usize) -> &Pose {
        &self.markers[id]
    }

    pub fn marker_poses(&self) -> &[Pose; FACE_COUNT] {
        &self.markers
    }
}

/// A pinhole-free camera: a forward cone with a range limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub pose: Pose,
    pub fov_half_angle: f64,
    pub max_range: f64,
    /// Markers seen more obliquely than this are not detected.
    pub max_incidence: f64,
}

impl CameraModel {
    /// Camera +z in the world frame.
    pub fn forward(&self) -> Vec3 {
        self.pose.z_axis()
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let ok = self.pose.is_finite()
            && self.fov_half_angle > 0.0
            && self.fov_half_angle <= std::f64::consts::PI
            && self.max_range > 0.0
            && self.max_incidence > 0.0
            && self.max_incidence < std::f64::consts::FRAC_PI_2;
        if ok {
            Ok(())
        } else {
            Err(PerceptionError::InvalidCamera(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarkerObservation {
    pub id: usize,
    /// Observed marker pose in the world frame.
    pub pose: Pose,
    /// Angle between the camera ray and the marker's −z axis.
    pub viewing_angle: f64,
}

/// Detector noise: independent Gaussian per position axis and per Euler angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub position_sigma: f64,
    pub angle_sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel { position_sigma: 0.002, angle_sigma: 1f64.to_radians() }
    }
}

impl NoiseModel {
    pub fn zero() -> Self {
        NoiseModel { position_sigma: 0.0, angle_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        if self.position_sigma >= 0.0 && self.angle_sigma >= 0.0 && self.position_sigma.is_finite() && self.angle_sigma.is_finite() {
            Ok(())
        } else {
            Err(PerceptionError::InvalidNoise(format!("{self:?}")))
        }
    }
}

/// Incidence of a marker seen from `cam`: the angle between the camera ray
/// and the marker's −z. Returns the ray too.
fn incidence(marker_world: &Pose, cam: &CameraModel) -> (f64, Vec3) {
    let ray = marker_world.position - cam.pose.position;
    let into = -marker_world.z_axis();
    let n = ray.norm();
    if n == 0.0 {
        return (std::f64::consts::PI, ray);
    }
    ((ray.dot(&into) / n).clamp(-1.0, 1.0).acos(), ray)
}

/// Ids of the markers the camera can detect, ascending.
pub fn visible_markers(cube: &CubeModel, cube_pose: &Pose, cam: &CameraModel) -> Vec<usize> {
    let fwd = cam.forward();
    (0..FACE_COUNT)
        .filter(|&id| {
            let m = cube_pose.compose(cube.marker_pose(id));
            let (inc, ray) = incidence(&m, cam);
            let dist = ray.norm();
            if inc >= cam.max_incidence || dist > cam.max_range || dist == 0.0 {
                return false;
            }
            let off_axis = (ray.dot(&fwd) / dist).clamp(-1.0, 1.0).acos();
            off_axis <= cam.fov_half_angle
        })
        .collect()
}

/// Perturb a true marker pose with detector noise. Six normal draws are
/// consumed on every call (position x, y, z then Euler x, y, z) whatever the
/// sigmas, so the stream stays aligned across noise settings.
pub fn observe_marker<R: Rng + ?Sized>(
    id: usize,
    true_marker_pose: &Pose,
    cam: &CameraModel,
    noise: &NoiseModel,
    rng: &mut R,
) -> MarkerObservation {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut z = [0.0; 6];
    for v in z.iter_mut() {
        *v = std.sample(rng);
    }
    let (inc, _) = incidence(true_marker_pose, cam);
    let viewing_angle = inc.min(std::f64::consts::FRAC_PI_2 - 1e-12);
    let mut pose = *true_marker_pose;
    if noise.position_sigma > 0.0 {
        pose.position += Vector3::new(z[0], z[1], z[2]) * noise.position_sigma;
    }
    if noise.angle_sigma > 0.0 {
        let s = noise.angle_sigma;
        pose.orientation *= euler_xyz_intrinsic(z[3] * s, z[4] * s, z[5] * s);
    }
    MarkerObservation { id, pose, viewing_angle }
}

fn total_order(a: &MarkerObservation, b: &MarkerObservation) -> Ordering {
    let key = |o: &MarkerObservation| {
        let q = o.pose.orientation.quaternion();
        [o.pose.position.x, o.pose.position.y, o.pose.position.z, q.w, q.i, q.j, q.k, o.viewing_angle]
    };
    a.id.cmp(&b.id).then_with(|| {
        key(a).iter().zip(key(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    })
}

/// Cube-centre pose implied by a single observed marker.
pub fn cube_from_marker(cube: &CubeModel, obs: &MarkerObservation) -> Pose {
    obs.pose.compose(&cube.marker_pose(obs.id).inverse())
}

/// Weighted fusion of the per-marker cube estimates (weight cos of viewing
/// angle). Observations are sorted first so the result does not depend on
/// their order.
pub fn fuse_observations(cube: &CubeModel, obs: &[MarkerObservation]) -> Result<Pose, PerceptionError> {
    if obs.is_empty() {
        return Err(PerceptionError::NoDetection);
    }
    let mut sorted = obs.to_vec();
    sorted.sort_by(total_order);
    let items: Vec<(f64, Pose)> = sorted
        .iter()
        .map(|o| (o.viewing_angle.cos().max(1e-6), cube_from_marker(cube, o)))
        .collect();
    if items.len() == 1 {
        return Ok(items[0].1);
    }
    average_poses(&items).ok_or(PerceptionError::NoDetection)
}

/// Exponential smoothing: lerp on position, slerp on orientation.
pub fn lowpass(prev: &Pose, new: &Pose, alpha: f64) -> Result<Pose, PerceptionError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PerceptionError::InvalidAlpha(alpha));
    }
    if alpha == 1.0 {
        return Ok(*new);
    }
    if alpha == 0.0 {
        return Ok(*prev);
    }
    Ok(Pose::new(
        prev.position + (new.position - prev.position) * alpha,
        slerp(&prev.orientation, &new.orientation, alpha),
    ))
}

/// Caller-owned state for [`lowpass`]; the first sample passes through.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseFilter {
    alpha: f64,
    state: Option<Pose>,
}

impl PoseFilter {
    pub fn new(alpha: f64) -> Result<Self, PerceptionError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(PerceptionError::InvalidAlpha(alpha));
        }
        Ok(PoseFilter { alpha, state: None })
    }

    pub fn update(&mut self, new: &Pose) -> Pose {
        let out = match &self.state {
            None => *new,
            Some(prev) => lowpass(prev, new, self.alpha).expect("alpha checked on construction"),
        };
        self.state = Some(out);
        out
    }

    pub fn value(&self) -> Option<Pose> {
        self.state
    }

    pub fn reset(&mut self) {
        self.state = None;
    }
}

/// Equal-weight mean over the last `capacity` poses.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseWindow {
    capacity: usize,
    buf: VecDeque<Pose>,
}

impl PoseWindow {
    pub fn new(capacity: usize) -> Self {
        PoseWindow { capacity: capacity.max(1), buf: VecDeque::new() }
    }

    pub fn push(&mut self, p: Pose) -> Pose {
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(p);
        self.mean().expect("window is non-empty")
    }

    pub fn mean(&self) -> Option<Pose> {
        match self.buf.len() {
            0 => None,
            1 => self.buf.front().copied(),
            _ => {
                let items: Vec<(f64, Pose)> = self.buf.iter().map(|p| (1.0, *p)).collect();
                average_poses(&items)
            }
        }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }
}
