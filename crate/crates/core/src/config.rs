//! Simulation configuration. Every field has a default so a partial TOML file
//! only needs the values it changes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::ErrorParams;
use crate::grasp::GraspParams;
use crate::kinematics::{ArmModel, ServoGains};
use crate::perception::{CameraModel, CubeModel, NoiseModel};
use crate::se3::{Pose, Vec3};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("could not parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("could not serialise config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// The camera is rigidly attached to the grasp frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraMount {
    /// Camera frame expressed in the grasp frame.
    pub offset: Pose,
    pub fov_half_angle: f64,
    pub max_range: f64,
    pub max_incidence: f64,
}

impl Default for CameraMount {
    fn default() -> Self {
        CameraMount {
            offset: Pose::from_translation(0.06, 0.0, -0.10),
            fov_half_angle: 0.6,
            max_range: 1.5,
            max_incidence: 70f64.to_radians(),
        }
    }
}

impl CameraMount {
    pub fn camera_at(&self, grasp_frame: &Pose) -> CameraModel {
        CameraModel {
            pose: grasp_frame.compose(&self.offset),
            fov_half_angle: self.fov_half_angle,
            max_range: self.max_range,
            max_incidence: self.max_incidence,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    /// Low-pass weight of each new frame.
    pub alpha: f64,
    /// Frames averaged for the grasp target.
    pub window: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams { alpha: 0.3, window: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineParams {
    pub approach_position_tolerance: f64,
    pub approach_angle_tolerance: f64,
    /// Seconds allowed in Approaching before the attempt counts as failed.
    pub approach_timeout: f64,
    /// The gripper closes early when it moved less than this (m, rad) over
    /// the last `stall_window` seconds.
    pub stall_position: f64,
    pub stall_angle: f64,
    pub stall_window: f64,
    /// A grasp succeeds when a true candidate is this close to the gripper.
    pub grasp_position_budget: f64,
    pub grasp_angle_budget: f64,
    pub gripper_open_width: f64,
    pub gripper_speed: f64,
    /// Joint-space gain used to return home between attempts (1/s).
    pub home_gain: f64,
    pub home_tolerance: f64,
    /// Headless runs issue the start command this long after the robot is
    /// ready in Tracking.
    pub start_dwell: f64,
    pub auto_start: bool,
    pub drop_pose: Pose,
    pub drop_position_tolerance: f64,
    pub drop_angle_tolerance: f64,
    pub failure_cap: usize,
    pub successes_required: usize,
    /// Hard stop on simulated time (s).
    pub max_trial_time: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            approach_position_tolerance: 0.003,
            approach_angle_tolerance: 2f64.to_radians(),
            approach_timeout: 15.0,
            stall_position: 0.0005,
            stall_angle: 0.2f64.to_radians(),
            stall_window: 0.5,
            grasp_position_budget: 0.02,
            grasp_angle_budget: 15f64.to_radians(),
            gripper_open_width: 0.10,
            gripper_speed: 0.10,
            home_gain: 2.0,
            home_tolerance: 1e-3,
            start_dwell: 1.0,
            auto_start: true,
            drop_pose: Pose::new(
                Vec3::new(0.35, -0.40, 0.35),
                crate::se3::euler_xyz_intrinsic(std::f64::consts::PI, 0.0, 0.0),
            ),
            drop_position_tolerance: 0.01,
            drop_angle_tolerance: 5f64.to_radians(),
            failure_cap: 25,
            successes_required: 3,
            max_trial_time: 900.0,
        }
    }
}

/// Where the human holds the cube out at the start of each handover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresentationParams {
    pub nominal: Pose,
    /// Uniform jitter per axis (± m).
    pub position_jitter: f64,
    /// Uniform yaw jitter about world z (± rad).
    pub yaw_jitter: f64,
}

impl Default for PresentationParams {
    fn default() -> Self {
        PresentationParams { nominal: Pose::from_translation(0.65, 0.0, 0.35), position_jitter: 0.02, yaw_jitter: 0.4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandPolicyKind {
    ArInformed,
    Reactive,
    Rigid,
    /// Driven by `move_hand` commands from a client.
    Manual,
}

impl fmt::Display for HandPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HandPolicyKind::ArInformed => "ar_informed",
            HandPolicyKind::Reactive => "reactive",
            HandPolicyKind::Rigid => "rigid",
            HandPolicyKind::Manual => "manual",
        })
    }
}

impl FromStr for HandPolicyKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().replace('-', "_").as_str() {
            "ar_informed" => Ok(HandPolicyKind::ArInformed),
            "reactive" => Ok(HandPolicyKind::Reactive),
            "rigid" => Ok(HandPolicyKind::Rigid),
            "manual" => Ok(HandPolicyKind::Manual),
            other => Err(ConfigError::Invalid(format!("unknown policy '{other}'"))),
        }
    }
}

/// Parameters of one scripted hand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandPolicy {
    /// Exponential correction rate (1/s).
    pub gain: f64,
    /// Delay before the hand reacts to the robot (s).
    pub latency: f64,
    pub max_speed: f64,
    pub tremor_sigma: f64,
    /// Offsets from the robot's path smaller than this are not corrected.
    pub deadband_position: f64,
    /// After a failed grasp, remember the miss and pre-compensate later.
    pub learns_from_failure: bool,
}

impl Default for HandPolicy {
    fn default() -> Self {
        HandPolicy {
            gain: 2.0,
            latency: 0.3,
            max_speed: 0.5,
            tremor_sigma: 0.001,
            deadband_position: 0.0,
            learns_from_failure: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTable {
    pub ar_informed: HandPolicy,
    pub reactive: HandPolicy,
    pub rigid: HandPolicy,
    pub manual: HandPolicy,
}

impl Default for PolicyTable {
    fn default() -> Self {
        PolicyTable {
            ar_informed: HandPolicy::default(),
            reactive: HandPolicy {
                gain: 1.5,
                latency: 0.6,
                deadband_position: 0.02,
                learns_from_failure: true,
                ..HandPolicy::default()
            },
            rigid: HandPolicy { gain: 0.0, latency: 0.0, ..HandPolicy::default() },
            manual: HandPolicy { gain: 0.0, latency: 0.0, tremor_sigma: 0.0, ..HandPolicy::default() },
        }
    }
}

impl PolicyTable {
    pub fn get(&self, kind: HandPolicyKind) -> &HandPolicy {
        match kind {
            HandPolicyKind::ArInformed => &self.ar_informed,
            HandPolicyKind::Reactive => &self.reactive,
            HandPolicyKind::Rigid => &self.rigid,
            HandPolicyKind::Manual => &self.manual,
        }
    }
}

/// One cell of the 2×2 design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialCondition {
    pub ar: bool,
    pub faked_error: bool,
}

impl TrialCondition {
    pub const ALL: [TrialCondition; 4] = [
        TrialCondition { ar: true, faked_error: false },
        TrialCondition { ar: true, faked_error: true },
        TrialCondition { ar: false, faked_error: false },
        TrialCondition { ar: false, faked_error: true },
    ];
}

impl fmt::Display for TrialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{}",
            if self.ar { "ar" } else { "no-ar" },
            if self.faked_error { "error" } else { "no-error" }
        )
    }
}

/// Parses `ar,no-error`, `no-ar,error` and so on. Missing parts default to
/// `ar` and `no-error`.
impl FromStr for TrialCondition {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = TrialCondition { ar: true, faked_error: false };
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.replace('_', "-").to_ascii_lowercase().as_str() {
                "ar" => c.ar = true,
                "no-ar" => c.ar = false,
                "error" => c.faked_error = true,
                "no-error" => c.faked_error = false,
                other => return Err(ConfigError::Invalid(format!("unknown condition token '{other}'"))),
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Fixed timestep (s).
    pub dt: f64,
    pub arm: ArmModel,
    pub cube: CubeModel,
    pub camera: CameraMount,
    pub noise: NoiseModel,
    pub filter: FilterParams,
    pub grasp: GraspParams,
    pub error: ErrorParams,
    pub servo: ServoGains,
    pub engine: EngineParams,
    pub presentation: PresentationParams,
    pub policies: PolicyTable,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 30.0,
            arm: ArmModel::panda(),
            cube: CubeModel::default(),
            camera: CameraMount::default(),
            noise: NoiseModel::default(),
            filter: FilterParams::default(),
            grasp: GraspParams::default(),
            error: ErrorParams::default(),
            servo: ServoGains::default(),
            engine: EngineParams::default(),
            presentation: PresentationParams::default(),
            policies: PolicyTable::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(0.0..=1.0).contains(&self.filter.alpha) {
            return bad("filter.alpha must lie in [0, 1]");
        }
        if self.filter.window == 0 {
            return bad("filter.window must be at least 1");
        }
        if self.noise.validate().is_err() {
            return bad("noise sigmas must be non-negative");
        }
        if self.error.offset_std < 0.0 || self.error.euler_std_deg < 0.0 {
            return bad("error std must be non-negative");
        }
        self.camera
            .camera_at(&Pose::identity())
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let e = &self.engine;
        if e.gripper_open_width <= self.cube.edge() {
            return bad("gripper must open wider than the cube");
        }
        if e.gripper_speed <= 0.0 || e.successes_required == 0 || e.approach_timeout <= 0.0 || e.stall_window < 0.0 {
            return bad("engine parameters must be positive");
        }
        for p in [&self.policies.ar_informed, &self.policies.reactive, &self.policies.rigid, &self.policies.manual] {
            if p.gain < 0.0 || p.latency < 0.0 || p.max_speed <= 0.0 || p.tremor_sigma < 0.0 {
                return bad("hand policy gain/latency must be non-negative and max_speed positive");
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }
}
