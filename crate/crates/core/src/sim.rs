//! The fixed-timestep handover world and its state machine.
//!
//! One call to [`Engine::step`] advances the clock by `dt` and runs, in order:
//! queued commands, the hand (tremor draw, policy), perception (one
//! observation per visible marker, ascending id), live grasp selection in
//! Tracking, the robot for the current phase, then the automatic start used
//! by headless runs. Random draws come from four independent ChaCha streams
//! derived from the trial seed (presentation, hand, perception, artifact), so
//! adding draws in one never shifts another.

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{apply_error, sample_error, ErrorArtifact};
use crate::config::{ConfigError, HandPolicyKind, SimConfig, TrialCondition};
use crate::grasp::{enumerate_grasps, freeze, select_grasp, GraspCandidate, GraspSelection};
use crate::kinematics::{joint_space_step, resolved_rate_step, JointState};
use crate::log::{Event, EventKind, HandoverRecord, LogHeader, Outcome, TrialLog, TrialSummary, SCHEMA_VERSION};
use crate::perception::{fuse_observations, observe_marker, visible_markers, PoseFilter, PoseWindow};
use crate::policy::{hand_policy_step, HandState, HandView, LearnedMiss};
use crate::se3::{geodesic_angle, Pose, Quat, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Tracking,
    Approaching,
    Grasping,
    Transporting,
    Dropping,
    Done,
}

impl Phase {
    /// The declared transitions. Failed attempts go back to Tracking.
    pub fn can_transition_to(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (Idle, Tracking)
                | (Tracking, Approaching)
                | (Approaching, Grasping)
                | (Approaching, Tracking)
                | (Grasping, Transporting)
                | (Grasping, Tracking)
                | (Transporting, Dropping)
                | (Dropping, Done)
                | (Done, Tracking)
        )
    }

    /// Phases in which the cube is still in the human's hand.
    pub fn hand_controls_cube(self) -> bool {
        matches!(self, Phase::Idle | Phase::Tracking | Phase::Approaching | Phase::Grasping)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Inputs from a client or the headless runner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    StartHandover,
    MoveHand { pose: Pose },
    SetCondition { ar: bool, faked_error: bool },
    Reset,
    BeginTrial { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    Client,
    Auto,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CommandError {
    #[error("command not allowed in phase {phase}: {reason}")]
    Phase { phase: Phase, reason: String },
    #[error("invalid command: {0}")]
    Invalid(String),
    #[error("command is handled by the session, not the engine")]
    SessionLevel,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trial aborted: {0}")]
    Aborted(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holder {
    Hand,
    Gripper,
    Released,
}

/// What the robot believes this tick.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerceptionFrame {
    pub raw: Option<Pose>,
    /// Raw estimate with the faked error applied (equal to raw without it).
    pub corrupted: Option<Pose>,
    pub filtered: Option<Pose>,
    /// Mean selected grasp pose over the last few frames.
    pub grasp_target: Option<Pose>,
    pub selection: Option<GraspSelection>,
    pub visible: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub tick: u64,
    pub clock: f64,
    pub phase: Phase,
    pub joints: JointState,
    pub cube: Pose,
    pub holder: Holder,
    pub gripper_aperture: f64,
    pub perception: PerceptionFrame,
    pub condition: TrialCondition,
}

#[derive(Debug, Clone, PartialEq)]
enum Finish {
    Completed,
    Aborted(String),
}

const STREAM_PRESENTATION: u64 = 1;
const STREAM_HAND: u64 = 2;
const STREAM_PERCEPTION: u64 = 3;
const STREAM_ARTIFACT: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

pub struct Engine {
    cfg: SimConfig,
    policy: HandPolicyKind,
    seed: u64,
    candidates: Vec<GraspCandidate>,
    world: WorldState,
    hand: HandState,
    manual_goal: Option<Pose>,
    grip_offset: Pose,
    filter: PoseFilter,
    window: PoseWindow,
    artifact: ErrorArtifact,
    rng_presentation: ChaCha8Rng,
    rng_hand: ChaCha8Rng,
    rng_perception: ChaCha8Rng,
    ee_history: VecDeque<Pose>,
    ready_since: Option<u64>,
    attempt_start: Option<u64>,
    first_start: Option<u64>,
    successes: usize,
    failures: usize,
    events: Vec<Event>,
    handovers: Vec<HandoverRecord>,
    finish: Option<Finish>,
}

impl Engine {
    pub fn new(cfg: SimConfig, condition: TrialCondition, policy: HandPolicyKind, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let home = cfg.arm.home();
        let ee = cfg.arm.forward(&home);
        let mut rng_artifact = stream(seed, STREAM_ARTIFACT);
        // sampled in every condition so the other streams never depend on it
        let artifact = sample_error(&cfg.camera.camera_at(&ee).forward(), &cfg.error, &mut rng_artifact);
        let candidates = enumerate_grasps(&cfg.cube, cfg.grasp.depth);
        let filter = PoseFilter::new(cfg.filter.alpha).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let window = PoseWindow::new(cfg.filter.window);
        let world = WorldState {
            tick: 0,
            clock: 0.0,
            phase: Phase::Idle,
            joints: JointState::at_rest(home),
            cube: cfg.presentation.nominal,
            holder: Holder::Hand,
            gripper_aperture: cfg.engine.gripper_open_width,
            perception: PerceptionFrame::default(),
            condition,
        };
        let mut engine = Engine {
            hand: HandState::new(world.cube),
            cfg,
            policy,
            seed,
            candidates,
            world,
            manual_goal: None,
            grip_offset: Pose::identity(),
            filter,
            window,
            artifact,
            rng_presentation: stream(seed, STREAM_PRESENTATION),
            rng_hand: stream(seed, STREAM_HAND),
            rng_perception: stream(seed, STREAM_PERCEPTION),
            ee_history: VecDeque::new(),
            ready_since: None,
            attempt_start: None,
            first_start: None,
            successes: 0,
            failures: 0,
            events: Vec::new(),
            handovers: Vec::new(),
            finish: None,
        };
        engine.present_cube();
        engine.ee_history.push_back(ee);
        Ok(engine)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn policy(&self) -> HandPolicyKind {
        self.policy
    }

    pub fn condition(&self) -> TrialCondition {
        self.world.condition
    }

    pub fn artifact(&self) -> &ErrorArtifact {
        &self.artifact
    }

    pub fn candidates(&self) -> &[GraspCandidate] {
        &self.candidates
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn successes(&self) -> usize {
        self.successes
    }

    pub fn failures(&self) -> usize {
        self.failures
    }

    pub fn is_finished(&self) -> bool {
        self.finish.is_some()
    }

    pub fn end_effector(&self) -> Pose {
        self.cfg.arm.forward(&self.world.joints.positions)
    }

    /// The servo target while an attempt is running.
    pub fn frozen_target(&self) -> Option<Pose> {
        self.world.perception.selection.filter(|s| s.frozen).map(|s| s.world_pose)
    }

    fn time_of(&self, tick: u64) -> f64 {
        tick as f64 * self.cfg.dt
    }

    fn log(&mut self, kind: EventKind) {
        self.events.push(Event { tick: self.world.tick, time: self.world.clock, event: kind });
    }

    fn set_phase(&mut self, next: Phase) {
        let from = self.world.phase;
        assert!(from.can_transition_to(next), "illegal transition {from:?} -> {next:?}");
        self.world.phase = next;
        if next != Phase::Tracking {
            self.ready_since = None;
        }
        self.log(EventKind::PhaseChanged { from, to: next });
    }

    fn present_cube(&mut self) {
        let p = &self.cfg.presentation;
        let j = p.position_jitter;
        let r = &mut self.rng_presentation;
        let offset = Vec3::new(r.gen_range(-1.0..=1.0) * j, r.gen_range(-1.0..=1.0) * j, r.gen_range(-1.0..=1.0) * j);
        let yaw = r.gen_range(-1.0..=1.0) * p.yaw_jitter;
        let pose = Pose::new(
            p.nominal.position + offset,
            Quat::from_axis_angle(&nalgebra::Vector3::z_axis(), yaw) * p.nominal.orientation,
        );
        let learned = self.hand.learned;
        self.hand = HandState::new(pose);
        self.hand.learned = learned;
        self.manual_goal = None;
        self.world.cube = pose;
        self.world.holder = Holder::Hand;
        self.log(EventKind::CubePresented { pose });
    }

    /// Idle → Tracking.
    pub fn begin(&mut self) {
        if self.world.phase == Phase::Idle {
            self.set_phase(Phase::Tracking);
        }
    }

    /// Applies one command now. Session-level commands are refused here.
    pub fn apply(&mut self, cmd: &Command, source: CommandSource) -> Result<(), CommandError> {
        let phase = self.world.phase;
        match cmd {
            Command::StartHandover => {
                if phase != Phase::Tracking {
                    return Err(CommandError::Phase { phase, reason: "start is only accepted while tracking".into() });
                }
                let Some(sel) = self.world.perception.selection else {
                    return Err(CommandError::Phase { phase, reason: "no grasp is selected yet".into() });
                };
                let target = self.world.perception.grasp_target.unwrap_or(sel.world_pose);
                let frozen = freeze(&GraspSelection { world_pose: target, ..sel })
                    .map_err(|e| CommandError::Invalid(e.to_string()))?;
                self.log(EventKind::CommandAccepted { source, command: *cmd });
                self.world.perception.selection = Some(frozen);
                self.attempt_start = Some(self.world.tick);
                self.first_start.get_or_insert(self.world.tick);
                self.hand.new_attempt();
                self.log(EventKind::SelectionFrozen { candidate_id: frozen.candidate_id, target });
                self.set_phase(Phase::Approaching);
                Ok(())
            }
            Command::MoveHand { pose } => {
                if self.policy != HandPolicyKind::Manual {
                    return Err(CommandError::Invalid("the hand is scripted in this session".into()));
                }
                if !pose.is_finite() {
                    return Err(CommandError::Invalid("pose is not finite".into()));
                }
                if !phase.hand_controls_cube() || self.world.holder != Holder::Hand {
                    return Err(CommandError::Phase { phase, reason: "the cube is not in the hand".into() });
                }
                self.manual_goal = Some(*pose);
                self.log(EventKind::CommandAccepted { source, command: *cmd });
                Ok(())
            }
            _ => Err(CommandError::SessionLevel),
        }
    }

    /// Advances one tick. Commands are applied first, in order; the returned
    /// list holds the index and reason of every rejected one.
    pub fn step(&mut self, inputs: &[Command]) -> Vec<(usize, CommandError)> {
        self.world.tick += 1;
        self.world.clock = self.time_of(self.world.tick);
        if self.finish.is_some() {
            return inputs
                .iter()
                .enumerate()
                .map(|(i, _)| (i, CommandError::Phase { phase: self.world.phase, reason: "trial is over".into() }))
                .collect();
        }
        let mut rejected = Vec::new();
        for (i, c) in inputs.iter().enumerate() {
            if let Err(e) = self.apply(c, CommandSource::Client) {
                rejected.push((i, e));
            }
        }
        if self.world.phase == Phase::Done {
            self.present_cube();
            self.set_phase(Phase::Tracking);
        }
        self.step_hand();
        self.step_perception();
        if self.world.phase == Phase::Tracking {
            self.step_selection();
        }
        self.step_robot();
        let ee = self.end_effector();
        if self.world.holder == Holder::Gripper {
            self.world.cube = ee.compose(&self.grip_offset);
        }
        self.ee_history.push_back(ee);
        let keep = self.history_len();
        while self.ee_history.len() > keep {
            self.ee_history.pop_front();
        }
        self.maybe_auto_start();
        self.check_limits();
        rejected
    }

    fn history_len(&self) -> usize {
        let p = &self.cfg.policies;
        let max_latency = [p.ar_informed.latency, p.reactive.latency, p.rigid.latency, p.manual.latency]
            .into_iter()
            .fold(0.0, f64::max);
        let stall = (self.cfg.engine.stall_window / self.cfg.dt).round() as usize;
        (max_latency / self.cfg.dt).ceil().max(stall as f64) as usize + 3
    }

    fn delayed_index(&self, latency: f64) -> Option<usize> {
        let k = (latency / self.cfg.dt).round() as usize;
        let n = self.ee_history.len();
        (n > 0).then(|| n.saturating_sub(1 + k))
    }

    fn delayed_ee(&self, latency: f64) -> Option<Pose> {
        self.delayed_index(latency).map(|i| self.ee_history[i])
    }

    /// Backward difference at the delayed sample.
    fn delayed_ee_velocity(&self, latency: f64) -> Option<Vec3> {
        let i = self.delayed_index(latency).filter(|&i| i > 0)?;
        Some((self.ee_history[i].position - self.ee_history[i - 1].position) / self.cfg.dt)
    }

    fn step_hand(&mut self) {
        let tremor: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut self.rng_hand));
        if self.world.holder != Holder::Hand {
            return;
        }
        let params = *self.cfg.policies.get(self.policy);
        let attempt_running = matches!(self.world.phase, Phase::Approaching | Phase::Grasping);
        if self.policy == HandPolicyKind::Manual || attempt_running {
            let since_start = if attempt_running {
                self.attempt_start.map(|t| self.time_of(self.world.tick - t))
            } else {
                None
            };
            let intent = match (self.world.condition.ar, self.world.perception.selection) {
                (true, Some(sel)) if sel.frozen => Some((sel.world_pose, &self.candidates[sel.candidate_id])),
                _ => None,
            };
            let view = HandView {
                since_start,
                delayed_ee: self.delayed_ee(params.latency),
                delayed_ee_velocity: self.delayed_ee_velocity(params.latency),
                intent,
                candidates: &self.candidates,
                manual_goal: self.manual_goal,
            };
            hand_policy_step(self.policy, &params, &mut self.hand, &view, self.cfg.dt);
        }
        let jitter = Vec3::new(tremor[0], tremor[1], tremor[2]) * params.tremor_sigma;
        self.world.cube = Pose::new(self.hand.intended.position + jitter, self.hand.intended.orientation);
    }

    fn step_perception(&mut self) {
        let cam = self.cfg.camera.camera_at(&self.end_effector());
        let frame = &mut self.world.perception;
        if self.world.holder == Holder::Released {
            frame.visible.clear();
            frame.raw = None;
            frame.corrupted = None;
            return;
        }
        frame.visible = visible_markers(&self.cfg.cube, &self.world.cube, &cam);
        let obs: Vec<_> = frame
            .visible
            .iter()
            .map(|&id| {
                let truth = self.world.cube.compose(self.cfg.cube.marker_pose(id));
                observe_marker(id, &truth, &cam, &self.cfg.noise, &mut self.rng_perception)
            })
            .collect();
        frame.raw = fuse_observations(&self.cfg.cube, &obs).ok();
        frame.corrupted = frame.raw.map(|p| {
            if self.world.condition.faked_error {
                apply_error(&p, &self.artifact)
            } else {
                p
            }
        });
        if let Some(c) = frame.corrupted {
            frame.filtered = Some(self.filter.update(&c));
        }
    }

    fn step_selection(&mut self) {
        let cam = self.cfg.camera.camera_at(&self.end_effector());
        let Some(est) = self.world.perception.filtered else { return };
        let prev = self.world.perception.selection;
        let sel = select_grasp(&self.candidates, &self.cfg.cube, &est, &cam, prev.as_ref(), &self.cfg.arm, &self.cfg.grasp).ok();
        let frame = &mut self.world.perception;
        match sel {
            Some(s) => {
                if prev.map(|p| p.candidate_id) != Some(s.candidate_id) {
                    self.window.clear();
                }
                frame.grasp_target = Some(self.window.push(s.world_pose));
            }
            None => {
                self.window.clear();
                frame.grasp_target = None;
            }
        }
        frame.selection = sel;
    }

    fn step_robot(&mut self) {
        let dt = self.cfg.dt;
        let e = self.cfg.engine;
        match self.world.phase {
            Phase::Idle | Phase::Done => {}
            Phase::Tracking => {
                let home = self.cfg.arm.home();
                self.world.joints = joint_space_step(&self.cfg.arm, &self.world.joints, &home, e.home_gain, dt);
                self.world.gripper_aperture = (self.world.gripper_aperture + e.gripper_speed * dt).min(e.gripper_open_width);
                let settled = (self.world.joints.positions - home).amax() < e.home_tolerance;
                let open = self.world.gripper_aperture >= e.gripper_open_width;
                if settled && open {
                    self.ready_since.get_or_insert(self.world.tick);
                } else {
                    self.ready_since = None;
                }
            }
            Phase::Approaching => {
                let target = self.frozen_target().expect("approach has a frozen target");
                match resolved_rate_step(&self.cfg.arm, &self.world.joints, &target, dt, &self.cfg.servo) {
                    Ok(js) => self.world.joints = js,
                    Err(err) => {
                        self.fail_attempt(None, Some(format!("servo error: {err}")));
                        return;
                    }
                }
                let ee = self.end_effector();
                let arrived = ee.position_distance(&target) < e.approach_position_tolerance
                    && geodesic_angle(&ee.orientation, &target.orientation) < e.approach_angle_tolerance;
                if arrived || self.stalled(&ee) {
                    self.set_phase(Phase::Grasping);
                } else if self.time_of(self.world.tick - self.attempt_start.unwrap_or(0)) > e.approach_timeout {
                    self.fail_attempt(None, Some("approach timeout".into()));
                }
            }
            Phase::Grasping => {
                self.world.joints.velocities = Default::default();
                let edge = self.cfg.cube.edge();
                self.world.gripper_aperture = (self.world.gripper_aperture - e.gripper_speed * dt).max(edge);
                if self.world.gripper_aperture <= edge {
                    self.resolve_grasp();
                }
            }
            Phase::Transporting => {
                if let Ok(js) = resolved_rate_step(&self.cfg.arm, &self.world.joints, &e.drop_pose, dt, &self.cfg.servo) {
                    self.world.joints = js;
                }
                let ee = self.end_effector();
                if ee.position_distance(&e.drop_pose) < e.drop_position_tolerance
                    && geodesic_angle(&ee.orientation, &e.drop_pose.orientation) < e.drop_angle_tolerance
                {
                    self.world.joints.velocities = Default::default();
                    self.set_phase(Phase::Dropping);
                }
            }
            Phase::Dropping => {
                self.world.gripper_aperture = (self.world.gripper_aperture + e.gripper_speed * dt).min(e.gripper_open_width);
                if self.world.gripper_aperture >= e.gripper_open_width {
                    self.complete_handover();
                }
            }
        }
    }

    /// True when the gripper has not moved over the last stall window.
    fn stalled(&self, ee: &Pose) -> bool {
        let e = &self.cfg.engine;
        let k = (e.stall_window / self.cfg.dt).round() as usize;
        let started = self.attempt_start.map_or(0, |t| self.world.tick - t) as usize;
        let n = self.ee_history.len();
        if k == 0 || started <= k || n < k {
            return false;
        }
        let then = &self.ee_history[n - k];
        ee.position_distance(then) < e.stall_position && geodesic_angle(&ee.orientation, &then.orientation) < e.stall_angle
    }

    /// Nearest true grasp to the gripper, scored against the budget.
    /// Returns (candidate id, position error, angle error, success).
    pub fn grasp_check(&self) -> (usize, f64, f64, bool) {
        let e = &self.cfg.engine;
        let ee = self.end_effector();
        let mut best = (0, f64::INFINITY, f64::INFINITY, false);
        let mut best_score = f64::INFINITY;
        for c in &self.candidates {
            let w = self.world.cube.compose(&c.pose);
            let pe = ee.position_distance(&w);
            let ae = geodesic_angle(&ee.orientation, &w.orientation);
            let score = (pe / e.grasp_position_budget).max(ae / e.grasp_angle_budget);
            if score < best_score {
                best_score = score;
                best = (c.id, pe, ae, pe < e.grasp_position_budget && ae < e.grasp_angle_budget);
            }
        }
        best
    }

    fn resolve_grasp(&mut self) {
        let (id, pe, ae, ok) = self.grasp_check();
        let frozen_id = self.world.perception.selection.map(|s| s.candidate_id).unwrap_or(id);
        if ok {
            self.log(EventKind::GraspAttempt {
                candidate_id: frozen_id,
                outcome: Outcome::Success,
                position_error: pe,
                angle_error: ae,
                reason: None,
            });
            self.grip_offset = self.end_effector().inverse().compose(&self.world.cube);
            self.world.holder = Holder::Gripper;
            self.world.perception.selection = None;
            self.window.clear();
            self.set_phase(Phase::Transporting);
        } else {
            let ee = self.end_effector();
            if self.cfg.policies.get(self.policy).learns_from_failure {
                let start = self.hand.attempt_start;
                self.hand.learned = Some(LearnedMiss::from_attempt(&start, &self.candidates[id], &ee));
            }
            self.fail_attempt(Some((pe, ae)), None);
        }
    }

    fn fail_attempt(&mut self, errors: Option<(f64, f64)>, reason: Option<String>) {
        let start = self.attempt_start.take().unwrap_or(self.world.tick);
        let candidate_id = self.world.perception.selection.map(|s| s.candidate_id).unwrap_or(0);
        let (pe, ae) = errors.unwrap_or_else(|| {
            let (_, pe, ae, _) = self.grasp_check();
            (pe, ae)
        });
        self.log(EventKind::GraspAttempt {
            candidate_id,
            outcome: Outcome::GraspFailure,
            position_error: pe,
            angle_error: ae,
            reason,
        });
        self.handovers.push(HandoverRecord {
            start_time: self.time_of(start),
            end_time: self.world.clock,
            outcome: Outcome::GraspFailure,
        });
        self.failures += 1;
        // the person pulls back and offers the cube again
        self.present_cube();
        self.world.perception.selection = None;
        self.world.perception.grasp_target = None;
        self.window.clear();
        self.world.joints.velocities = Default::default();
        self.set_phase(Phase::Tracking);
    }

    fn complete_handover(&mut self) {
        let start = self.attempt_start.take().unwrap_or(self.world.tick);
        let record = HandoverRecord { start_time: self.time_of(start), end_time: self.world.clock, outcome: Outcome::Success };
        self.handovers.push(record);
        self.successes += 1;
        self.world.holder = Holder::Released;
        self.log(EventKind::HandoverCompleted {
            index: self.successes,
            start_time: record.start_time,
            end_time: record.end_time,
        });
        self.set_phase(Phase::Done);
        if self.successes >= self.cfg.engine.successes_required {
            let total = record.end_time - self.time_of(self.first_start.unwrap_or(start));
            self.log(EventKind::TrialCompleted { total_time: total });
            self.finish = Some(Finish::Completed);
        }
    }

    fn maybe_auto_start(&mut self) {
        let e = &self.cfg.engine;
        if !e.auto_start || self.world.phase != Phase::Tracking || self.finish.is_some() {
            return;
        }
        let Some(since) = self.ready_since else { return };
        if self.time_of(self.world.tick - since) >= e.start_dwell && self.world.perception.selection.is_some() {
            let _ = self.apply(&Command::StartHandover, CommandSource::Auto);
        }
    }

    fn check_limits(&mut self) {
        if self.finish.is_some() {
            return;
        }
        let e = &self.cfg.engine;
        let reason = if self.failures >= e.failure_cap {
            Some(format!("failure cap of {} reached", e.failure_cap))
        } else if self.world.clock > e.max_trial_time {
            Some(format!("time limit of {} s reached", e.max_trial_time))
        } else {
            None
        };
        if let Some(r) = reason {
            self.log(EventKind::TrialAborted { reason: r.clone() });
            self.finish = Some(Finish::Aborted(r));
        }
    }

    pub fn header(&self) -> LogHeader {
        LogHeader {
            schema_version: SCHEMA_VERSION,
            condition: self.world.condition,
            policy: self.policy,
            seed: self.seed,
            dt: self.cfg.dt,
            artifact: self.world.condition.faked_error.then_some(self.artifact),
            config: self.cfg.clone(),
        }
    }

    pub fn summary(&self) -> TrialSummary {
        let total_time = match self.finish {
            Some(Finish::Completed) => self.events.iter().rev().find_map(|e| match e.event {
                EventKind::TrialCompleted { total_time } => Some(total_time),
                _ => None,
            }),
            _ => None,
        };
        TrialSummary {
            successes: self.successes,
            failures: self.failures,
            total_time,
            aborted: match &self.finish {
                Some(Finish::Aborted(r)) => Some(r.clone()),
                _ => None,
            },
            final_tick: self.world.tick,
            handovers: self.handovers.clone(),
        }
    }

    pub fn to_log(&self) -> TrialLog {
        TrialLog { header: self.header(), events: self.events.clone(), summary: self.summary() }
    }

    pub fn into_log(self) -> TrialLog {
        let summary = self.summary();
        TrialLog { header: self.header(), events: self.events, summary }
    }
}
