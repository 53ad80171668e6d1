//! Serial-arm kinematics: DH forward kinematics, the geometric Jacobian,
//! the resolved-rate servo and a damped-least-squares reachability test.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use nalgebra::{SMatrix, SVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{rotation_log, Pose, Quat, Twist, Vec3};

pub const DOF: usize = 7;

pub type JointVector = SVector<f64, DOF>;
pub type Jacobian = SMatrix<f64, 6, DOF>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("model mismatch: expected {expected} joint values, got {got}")]
    ModelMismatch { expected: usize, got: usize },
    #[error("invalid arm model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("jacobian is singular (smallest singular value {0:.3e}) and damping is disabled")]
    Singularity(f64),
}

/// Which DH variant the joint table is written in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DhConvention {
    /// `Rz(θ) Tz(d) Tx(a) Rx(α)`
    Standard,
    /// Craig: `Rx(α) Tx(a) Rz(θ) Tz(d)`
    Modified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
    pub lower: f64,
    pub upper: f64,
    pub max_velocity: f64,
}

impl DhJoint {
    fn pre(&self, convention: DhConvention) -> Pose {
        match convention {
            DhConvention::Standard => Pose::identity(),
            DhConvention::Modified => Pose::new(
                Vec3::new(self.a, 0.0, 0.0),
                UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
            ),
        }
    }

    fn post(&self, convention: DhConvention) -> Pose {
        match convention {
            DhConvention::Standard => {
                // Tz(d) Tx(a) Rx(α)
                Pose::new(
                    Vec3::new(self.a, 0.0, self.d),
                    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), self.alpha),
                )
            }
            DhConvention::Modified => Pose::from_translation(0.0, 0.0, self.d),
        }
    }
}

/// A 7-joint revolute serial arm. Validated on construction and on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmModelRepr", into = "ArmModelRepr")]
pub struct ArmModel {
    convention: DhConvention,
    joints: Vec<DhJoint>,
    flange_to_grasp: Pose,
    home: JointVector,
    // cached per-joint fixed transforms
    #[doc(hidden)]
    pre: Vec<Pose>,
    #[doc(hidden)]
    post: Vec<Pose>,
}

#[derive(Serialize, Deserialize)]
struct ArmModelRepr {
    convention: DhConvention,
    joints: Vec<DhJoint>,
    flange_to_grasp: Pose,
    home: Vec<f64>,
}

impl From<ArmModel> for ArmModelRepr {
    fn from(m: ArmModel) -> Self {
        ArmModelRepr {
            convention: m.convention,
            joints: m.joints,
            flange_to_grasp: m.flange_to_grasp,
            home: m.home.iter().copied().collect(),
        }
    }
}

impl TryFrom<ArmModelRepr> for ArmModel {
    type Error = KinematicsError;

    fn try_from(r: ArmModelRepr) -> Result<Self, Self::Error> {
        if r.home.len() != DOF {
            return Err(KinematicsError::ModelMismatch { expected: DOF, got: r.home.len() });
        }
        ArmModel::new(r.convention, r.joints, r.flange_to_grasp, JointVector::from_column_slice(&r.home))
    }
}

impl ArmModel {
    pub fn new(
        convention: DhConvention,
        joints: Vec<DhJoint>,
        flange_to_grasp: Pose,
        home: JointVector,
    ) -> Result<Self, KinematicsError> {
        if joints.len() != DOF {
            return Err(KinematicsError::ModelMismatch { expected: DOF, got: joints.len() });
        }
        for (i, j) in joints.iter().enumerate() {
            let finite = [j.a, j.d, j.alpha, j.theta_offset, j.lower, j.upper, j.max_velocity]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return Err(KinematicsError::InvalidModel(format!("joint {i} has non-finite parameters")));
            }
            if j.lower >= j.upper {
                return Err(KinematicsError::InvalidModel(format!("joint {i}: lower limit must be below upper")));
            }
            if j.max_velocity <= 0.0 {
                return Err(KinematicsError::InvalidModel(format!("joint {i}: velocity limit must be positive")));
            }
            if home[i] < j.lower || home[i] > j.upper {
                return Err(KinematicsError::InvalidModel(format!("joint {i}: home position outside limits")));
            }
        }
        if !flange_to_grasp.is_finite() {
            return Err(KinematicsError::InvalidModel("flange offset is not finite".into()));
        }
        let pre = joints.iter().map(|j| j.pre(convention)).collect();
        let post = joints.iter().map(|j| j.post(convention)).collect();
        Ok(ArmModel { convention, joints, flange_to_grasp, home, pre, post })
    }

    /// Franka Emika Panda (manufacturer modified-DH table) with the standard hand:
    /// grasp frame 0.107 m flange + 0.1034 m fingertip centre, rotated -45° about z.
    ///
    /// The home configuration points the gripper forward and about 39° down,
    /// looking at the hand-over zone in front of the robot.
    pub fn panda() -> Self {
        let lim = [
            (-2.8973, 2.8973, 2.1750),
            (-1.7628, 1.7628, 2.1750),
            (-2.8973, 2.8973, 2.1750),
            (-3.0718, -0.0698, 2.1750),
            (-2.8973, 2.8973, 2.6100),
            (-0.0175, 3.7525, 2.6100),
            (-2.8973, 2.8973, 2.6100),
        ];
        let table = [
            (0.0, 0.333, 0.0),
            (0.0, 0.0, -FRAC_PI_2),
            (0.0, 0.316, FRAC_PI_2),
            (0.0825, 0.0, FRAC_PI_2),
            (-0.0825, 0.384, -FRAC_PI_2),
            (0.0, 0.0, FRAC_PI_2),
            (0.088, 0.0, FRAC_PI_2),
        ];
        let joints = table
            .iter()
            .zip(lim.iter())
            .map(|(&(a, d, alpha), &(lower, upper, max_velocity))| DhJoint {
                a,
                d,
                alpha,
                theta_offset: 0.0,
                lower,
                upper,
                max_velocity,
            })
            .collect();
        let flange_to_grasp = Pose::new(
            Vec3::new(0.0, 0.0, 0.107 + 0.1034),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), -FRAC_PI_4),
        );
        ArmModel::new(DhConvention::Modified, joints, flange_to_grasp, panda_home())
            .expect("built-in Panda model is valid")
    }

    pub fn convention(&self) -> DhConvention {
        self.convention
    }

    pub fn joints(&self) -> &[DhJoint] {
        &self.joints
    }

    pub fn flange_to_grasp(&self) -> &Pose {
        &self.flange_to_grasp
    }

    pub fn home(&self) -> JointVector {
        self.home
    }

    pub fn with_flange_to_grasp(&self, offset: Pose) -> Result<Self, KinematicsError> {
        ArmModel::new(self.convention, self.joints.clone(), offset, self.home)
    }

    pub fn lower_limits(&self) -> JointVector {
        JointVector::from_iterator(self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> JointVector {
        JointVector::from_iterator(self.joints.iter().map(|j| j.upper))
    }

    pub fn velocity_limits(&self) -> JointVector {
        JointVector::from_iterator(self.joints.iter().map(|j| j.max_velocity))
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        self.joints.iter().zip(q.iter()).all(|(j, v)| *v >= j.lower && *v <= j.upper)
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector::from_iterator(self.joints.iter().zip(q.iter()).map(|(j, v)| v.clamp(j.lower, j.upper)))
    }

    /// Upper bound on the distance from the base to any reachable grasp frame.
    pub fn reach_bound(&self) -> f64 {
        self.joints.iter().map(|j| j.a.hypot(j.d)).sum::<f64>() + self.flange_to_grasp.position.norm()
    }

    /// Grasp-frame pose in the world (base) frame.
    pub fn forward(&self, q: &JointVector) -> Pose {
        let mut t = Pose::identity();
        for i in 0..DOF {
            t = t.compose(&self.joint_transform(i, q[i]));
        }
        t.compose(&self.flange_to_grasp)
    }

    fn joint_transform(&self, i: usize, q: f64) -> Pose {
        let rz = Pose::from_rotation(UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            q + self.joints[i].theta_offset,
        ));
        self.pre[i].compose(&rz).compose(&self.post[i])
    }

    /// Frames in which each joint rotates about its local z, plus the grasp frame.
    pub fn joint_frames(&self, q: &JointVector) -> ([Pose; DOF], Pose) {
        let mut frames = [Pose::identity(); DOF];
        let mut t = Pose::identity();
        for i in 0..DOF {
            let axis_frame = t.compose(&self.pre[i]);
            frames[i] = axis_frame;
            let rz = Pose::from_rotation(UnitQuaternion::from_axis_angle(
                &Vector3::z_axis(),
                q[i] + self.joints[i].theta_offset,
            ));
            t = axis_frame.compose(&rz).compose(&self.post[i]);
        }
        (frames, t.compose(&self.flange_to_grasp))
    }

    /// Geometric Jacobian at `q`; rows are (linear, angular) in the world frame.
    pub fn jacobian_at(&self, q: &JointVector) -> Jacobian {
        self.forward_and_jacobian(q).1
    }

    /// Grasp-frame pose and Jacobian from one pass over the chain.
    pub fn forward_and_jacobian(&self, q: &JointVector) -> (Pose, Jacobian) {
        let (frames, ee) = self.joint_frames(q);
        let mut jac = Jacobian::zeros();
        for (i, f) in frames.iter().enumerate() {
            let z = f.z_axis();
            let lin = z.cross(&(ee.position - f.position));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        (ee, jac)
    }
}

fn panda_home() -> JointVector {
    JointVector::from_column_slice(&PANDA_HOME)
}

// grasp frame near (0.52, 0, 0.55), approach axis pitched 47° below horizontal,
// elbow well clear of its limit
const PANDA_HOME: [f64; DOF] = [0.0, -0.5, 0.0, -2.3, 0.0, 2.55, FRAC_PI_4];

fn check_len(q: &[f64]) -> Result<JointVector, KinematicsError> {
    if q.len() != DOF {
        return Err(KinematicsError::ModelMismatch { expected: DOF, got: q.len() });
    }
    Ok(JointVector::from_column_slice(q))
}

/// Joint positions (rad) and velocities (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub positions: JointVector,
    pub velocities: JointVector,
}

impl JointState {
    pub fn at_rest(positions: JointVector) -> Self {
        JointState { positions, velocities: JointVector::zeros() }
    }
}

pub fn fk(model: &ArmModel, q: &[f64]) -> Result<Pose, KinematicsError> {
    Ok(model.forward(&check_len(q)?))
}

pub fn jacobian(model: &ArmModel, q: &[f64]) -> Result<Jacobian, KinematicsError> {
    Ok(model.jacobian_at(&check_len(q)?))
}

/// Gains and limits for the resolved-rate servo.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServoGains {
    /// Proportional gain on position error (1/s).
    pub linear_gain: f64,
    /// Proportional gain on orientation error (1/s).
    pub angular_gain: f64,
    /// Commanded linear speed cap (m/s).
    pub max_linear_speed: f64,
    /// Commanded angular speed cap (rad/s).
    pub max_angular_speed: f64,
    /// DLS damping λ. `None` uses the plain pseudo-inverse and fails near
    /// singularities.
    pub damping: Option<f64>,
}

impl Default for ServoGains {
    fn default() -> Self {
        ServoGains {
            linear_gain: 1.5,
            angular_gain: 2.0,
            max_linear_speed: 0.25,
            max_angular_speed: 1.0,
            damping: Some(0.05),
        }
    }
}

const SINGULAR_THRESHOLD: f64 = 1e-4;

/// Twist that drives `current` toward `target`: proportional on position,
/// proportional on the rotation vector of the orientation error. Each part is
/// scaled down (direction preserved) to its speed cap.
pub fn desired_twist(current: &Pose, target: &Pose, gains: &ServoGains) -> Twist {
    let pos_err = target.position - current.position;
    let rot_err = rotation_log(&(target.orientation * current.orientation.inverse()));
    let mut linear = pos_err * gains.linear_gain;
    let mut angular = rot_err * gains.angular_gain;
    let ls = linear.norm();
    if ls > gains.max_linear_speed {
        linear *= gains.max_linear_speed / ls;
    }
    let asp = angular.norm();
    if asp > gains.max_angular_speed {
        angular *= gains.max_angular_speed / asp;
    }
    Twist { linear, angular }
}

/// Solves `J q̇ = v` in the least-squares sense. With damping this is
/// `Jᵀ (J Jᵀ + λ² I)⁻¹ v` and never fails.
pub fn solve_joint_rates(
    jac: &Jacobian,
    twist: &Vector6<f64>,
    damping: Option<f64>,
) -> Result<JointVector, KinematicsError> {
    let jjt = jac * jac.transpose();
    let lambda2 = match damping {
        Some(l) => l * l,
        None => {
            let sigma_min = jjt.symmetric_eigenvalues().min().max(0.0).sqrt();
            if sigma_min < SINGULAR_THRESHOLD {
                return Err(KinematicsError::Singularity(sigma_min));
            }
            0.0
        }
    };
    let a = jjt + SMatrix::<f64, 6, 6>::identity() * lambda2;
    let x = match a.cholesky() {
        Some(c) => c.solve(twist),
        None => {
            let s = jac.transpose().svd(true, true);
            let sigma_min = s.singular_values.min();
            return Err(KinematicsError::Singularity(sigma_min));
        }
    };
    Ok(jac.transpose() * x)
}

/// Scales `qdot` uniformly so no joint exceeds its velocity limit. Uniform
/// scaling keeps the resulting end-effector twist direction unchanged.
pub fn clamp_joint_rates(model: &ArmModel, qdot: &JointVector) -> JointVector {
    let mut ratio: f64 = 1.0;
    for (v, j) in qdot.iter().zip(model.joints()) {
        ratio = ratio.max(v.abs() / j.max_velocity);
    }
    if ratio > 1.0 {
        qdot / ratio
    } else {
        *qdot
    }
}

/// One resolved-rate control tick toward `target`.
pub fn resolved_rate_step(
    model: &ArmModel,
    joints: &JointState,
    target: &Pose,
    dt: f64,
    gains: &ServoGains,
) -> Result<JointState, KinematicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KinematicsError::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !target.is_finite() {
        return Err(KinematicsError::InvalidInput("target pose is not finite".into()));
    }
    let q = joints.positions;
    let current = model.forward(&q);
    let twist = desired_twist(&current, target, gains);
    if twist.linear == Vec3::zeros() && twist.angular == Vec3::zeros() {
        return Ok(JointState::at_rest(q));
    }
    let jac = model.jacobian_at(&q);
    let qdot = solve_joint_rates(&jac, &twist.to_vector(), gains.damping)?;
    let qdot = clamp_joint_rates(model, &qdot);
    Ok(integrate(model, &q, &qdot, dt))
}

/// Joint-space proportional move toward `goal`, velocity clamped.
pub fn joint_space_step(model: &ArmModel, joints: &JointState, goal: &JointVector, gain: f64, dt: f64) -> JointState {
    let qdot = clamp_joint_rates(model, &((goal - joints.positions) * gain));
    integrate(model, &joints.positions, &qdot, dt)
}

fn integrate(model: &ArmModel, q: &JointVector, qdot: &JointVector, dt: f64) -> JointState {
    let next = model.clamp_to_limits(&(q + qdot * dt));
    let realized = JointVector::from_iterator(
        next.iter()
            .zip(q.iter())
            .zip(qdot.iter())
            .map(|((n, p), v)| if n - p == v * dt { *v } else { (n - p) / dt }),
    );
    JointState { positions: next, velocities: realized }
}

/// Settings for the iterative inverse-kinematics solve behind [`is_reachable`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkConfig {
    pub max_iterations: usize,
    pub position_tolerance: f64,
    pub angle_tolerance: f64,
    pub damping: f64,
    /// Largest joint change per iteration (rad).
    pub max_step: f64,
    /// A seed is abandoned after this many iterations that each cut the
    /// error by less than `min_improvement` (relative).
    pub stall_iterations: usize,
    pub min_improvement: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        IkConfig {
            max_iterations: 200,
            position_tolerance: 1e-3,
            angle_tolerance: 1f64.to_radians(),
            damping: 0.05,
            max_step: 0.4,
            stall_iterations: 8,
            min_improvement: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSolution {
    pub joints: JointVector,
    pub converged: bool,
    pub iterations: usize,
    pub position_error: f64,
    pub angle_error: f64,
}

fn pose_error(current: &Pose, target: &Pose) -> Vector6<f64> {
    let p = target.position - current.position;
    let r = rotation_log(&(target.orientation * current.orientation.inverse()));
    Vector6::new(p.x, p.y, p.z, r.x, r.y, r.z)
}

/// Damped least squares IK from one seed. Joints at a limit that the update
/// pushes further out are frozen for that iteration.
pub fn solve_ik(model: &ArmModel, target: &Pose, seed: &JointVector, cfg: &IkConfig) -> IkSolution {
    let lower = model.lower_limits();
    let upper = model.upper_limits();
    let mut q = model.clamp_to_limits(seed);
    let mut best_err = f64::INFINITY;
    let mut stall = 0;
    for it in 0..cfg.max_iterations {
        let (current, mut jac) = model.forward_and_jacobian(&q);
        let err = pose_error(&current, target);
        let pe = err.fixed_rows::<3>(0).norm();
        let ae = err.fixed_rows::<3>(3).norm();
        if pe < cfg.position_tolerance && ae < cfg.angle_tolerance {
            return IkSolution { joints: q, converged: true, iterations: it, position_error: pe, angle_error: ae };
        }
        let scalar = pe + 0.1 * ae;
        if scalar < best_err * (1.0 - cfg.min_improvement) {
            best_err = scalar;
            stall = 0;
        } else {
            stall += 1;
            if stall > cfg.stall_iterations {
                break;
            }
        }
        // shrink damping with the error so the last iterations are near Gauss-Newton
        let lambda = cfg.damping * (scalar / 0.05).clamp(0.02, 1.0);
        let mut dq = JointVector::zeros();
        for _pass in 0..2 {
            dq = solve_joint_rates(&jac, &err, Some(lambda)).unwrap_or_else(|_| JointVector::zeros());
            let mut blocked = false;
            for i in 0..DOF {
                let at_lower = q[i] <= lower[i] + 1e-9 && dq[i] < 0.0;
                let at_upper = q[i] >= upper[i] - 1e-9 && dq[i] > 0.0;
                if (at_lower || at_upper) && jac.column(i).norm() > 0.0 {
                    jac.column_mut(i).fill(0.0);
                    blocked = true;
                }
            }
            if !blocked {
                break;
            }
        }
        let m = dq.amax();
        if m > cfg.max_step {
            dq *= cfg.max_step / m;
        }
        q = model.clamp_to_limits(&(q + dq));
    }
    let current = model.forward(&q);
    let err = pose_error(&current, target);
    let pe = err.fixed_rows::<3>(0).norm();
    let ae = err.fixed_rows::<3>(3).norm();
    IkSolution {
        joints: q,
        converged: pe < cfg.position_tolerance && ae < cfg.angle_tolerance,
        iterations: cfg.max_iterations,
        position_error: pe,
        angle_error: ae,
    }
}

/// The eight deterministic IK seeds for `target`: home, then seven
/// perturbations of it. Joint 1 of every seed is turned to face the target's
/// azimuth so the seed set rotates with the target about the base axis.
pub fn ik_seeds(model: &ArmModel, target: &Pose) -> [JointVector; 8] {
    let home = model.home();
    let azimuth = target.position.y.atan2(target.position.x);
    let home_az = model.forward(&home);
    let base_az = home_az.position.y.atan2(home_az.position.x);
    let turn = wrap_angle(azimuth - base_az);
    const PERTURB: [[f64; DOF]; 7] = [
        [0.0, 0.5, 0.0, 0.6, 0.0, -0.5, 0.0],
        [0.0, -0.6, 0.0, -0.5, 0.0, -1.2, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, PI * 0.5],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -PI * 0.5],
        [0.0, 0.3, 1.5, 0.3, -1.5, 0.0, 0.0],
        [0.0, 0.3, -1.5, 0.3, 1.5, 0.0, 0.0],
        [0.0, 0.6, 0.0, 1.2, 0.0, -1.0, PI],
    ];
    let mut seeds = [home; 8];
    for (k, s) in seeds.iter_mut().enumerate() {
        if k > 0 {
            *s += JointVector::from_column_slice(&PERTURB[k - 1]);
            // keep joint 7 inside its range by wrapping a full turn
            let j7 = &model.joints()[DOF - 1];
            if s[DOF - 1] > j7.upper {
                s[DOF - 1] -= 2.0 * PI;
            }
            if s[DOF - 1] < j7.lower {
                s[DOF - 1] += 2.0 * PI;
            }
        }
        s[0] += turn;
        *s = model.clamp_to_limits(s);
    }
    seeds
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut x = (a + PI).rem_euclid(2.0 * PI) - PI;
    if x == -PI {
        x = PI;
    }
    x
}

/// Tries each seed in order and returns the first converged solution.
pub fn inverse_kinematics(model: &ArmModel, target: &Pose, cfg: &IkConfig) -> Option<IkSolution> {
    if !target.is_finite() || target.position.norm() > model.reach_bound() {
        return None;
    }
    ik_seeds(model, target)
        .iter()
        .map(|seed| solve_ik(model, target, seed, cfg))
        .find(|s| s.converged && model.within_limits(&s.joints))
}

/// True iff the grasp frame can be placed at `target` within 1 mm / 1° with
/// all joints inside their limits.
pub fn is_reachable(model: &ArmModel, target: &Pose) -> bool {
    inverse_kinematics(model, target, &IkConfig::default()).is_some()
}

/// Quaternion for a frame whose z axis is `approach` and y axis as close as
/// possible to `finger`.
pub fn frame_from_approach(approach: &Vec3, finger: &Vec3) -> Quat {
    let z = approach.normalize();
    let y = (finger - z * finger.dot(&z)).normalize();
    let x = y.cross(&z);
    crate::se3::quat_from_axes(&x, &y, &z)
}
