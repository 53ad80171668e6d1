//! Scripted models of the human hand holding the cube.
//!
//! Every policy moves an *intended* cube pose; tremor is jitter added on top
//! by the engine. Corrections are made in the grasp frame so the grasp error
//! shrinks by `1 − e^(−g·dt)` per tick, capped at `max_speed`.

use serde::{Deserialize, Serialize};

use crate::config::{HandPolicy, HandPolicyKind};
use crate::grasp::GraspCandidate;
use crate::se3::{geodesic_angle, slerp, Pose, Quat, Vec3};

/// What the hand can see this tick.
#[derive(Debug, Clone, Copy)]
pub struct HandView<'a> {
    /// Seconds since the current attempt's start command, if one is running.
    pub since_start: Option<f64>,
    /// End-effector pose `latency` seconds ago.
    pub delayed_ee: Option<Pose>,
    /// End-effector linear velocity at the same instant.
    pub delayed_ee_velocity: Option<Vec3>,
    /// The frozen grasp target and candidate. Only shown with AR.
    pub intent: Option<(Pose, &'a GraspCandidate)>,
    pub candidates: &'a [GraspCandidate],
    /// Latest `move_hand` goal, for the manual policy.
    pub manual_goal: Option<Pose>,
}

/// Correction remembered after a failed grasp: the move that would have put
/// the nearest grasp onto the gripper, measured from where the cube was held
/// when the attempt started.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnedMiss {
    /// Nearest true grasp at the failed attempt.
    pub candidate_id: usize,
    /// World-frame shift of that grasp.
    pub translation: Vec3,
    /// Cube-frame rotation applied to the held cube.
    pub rotation: Quat,
}

impl LearnedMiss {
    /// Learns from a gripper that ended at `ee` while the attempt started
    /// with the cube at `start`.
    pub fn from_attempt(start: &Pose, cand: &GraspCandidate, ee: &Pose) -> Self {
        LearnedMiss {
            candidate_id: cand.id,
            translation: ee.position - start.compose(&cand.pose).position,
            rotation: start.orientation.inverse() * ee.orientation * cand.pose.orientation.inverse(),
        }
    }

    /// Grasp-frame goal for candidate `cand` when the cube is held at `held`.
    pub fn goal(&self, held: &Pose, cand: &GraspCandidate) -> Pose {
        Pose::new(
            held.compose(&cand.pose).position + self.translation,
            held.orientation * self.rotation * cand.pose.orientation,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandState {
    pub intended: Pose,
    /// Intended pose when the current attempt started.
    pub attempt_start: Pose,
    pub engaged: bool,
    /// Goal frozen at engagement when a learned miss is applied.
    pub fixed_goal: Option<(usize, Pose)>,
    pub learned: Option<LearnedMiss>,
}

impl HandState {
    pub fn new(intended: Pose) -> Self {
        HandState { intended, attempt_start: intended, engaged: false, fixed_goal: None, learned: None }
    }

    /// Forget per-attempt state; a learned miss is kept.
    pub fn new_attempt(&mut self) {
        self.attempt_start = self.intended;
        self.engaged = false;
        self.fixed_goal = None;
    }
}

/// Moves `current` toward `goal` by the exponential fraction for one tick,
/// with the translation capped at `max_step`.
pub fn decay_toward(current: &Pose, goal: &Pose, gain: f64, dt: f64, max_step: f64) -> Pose {
    let frac = 1.0 - (-gain * dt).exp();
    let mut delta = (goal.position - current.position) * frac;
    let n = delta.norm();
    if n > max_step {
        delta *= max_step / n;
    }
    Pose::new(current.position + delta, slerp(&current.orientation, &goal.orientation, frac))
}

/// Moves the cube so its grasp frame `g` (cube frame) heads for `goal_grasp`.
fn move_grasp_frame(cube: &Pose, g: &Pose, goal_grasp: &Pose, p: &HandPolicy, dt: f64) -> Pose {
    let current = cube.compose(g);
    let next = decay_toward(&current, goal_grasp, p.gain, dt, p.max_speed * dt);
    next.compose(&g.inverse())
}

/// Candidates closer to the line than the nearest one plus this count as
/// equally on it.
const LINE_TIE: f64 = 0.001;

/// The grasp the gripper seems headed for: the candidate nearest its line of
/// travel, with near-ties going to the closest orientation, then lowest id.
fn headed_for<'a>(cube: &Pose, candidates: &'a [GraspCandidate], ee: &Pose, dir: &Vec3) -> Option<&'a GraspCandidate> {
    let world: Vec<Pose> = candidates.iter().map(|c| cube.compose(&c.pose)).collect();
    let off_line = |w: &Pose| (w.position - project_on_line(&w.position, &ee.position, dir)).norm();
    let nearest = world.iter().map(off_line).fold(f64::INFINITY, f64::min);
    let mut best: Option<(&GraspCandidate, f64)> = None;
    for (c, w) in candidates.iter().zip(&world) {
        if off_line(w) > nearest + LINE_TIE {
            continue;
        }
        let a = geodesic_angle(&w.orientation, &ee.orientation);
        if best.is_none_or(|(_, b)| a < b - 1e-12) {
            best = Some((c, a));
        }
    }
    best.map(|(c, _)| c)
}

/// Below this speed the gripper's heading is not readable.
const MIN_READABLE_SPEED: f64 = 0.02;

/// Projects `p` onto the line through `origin` along unit `dir`.
fn project_on_line(p: &Vec3, origin: &Vec3, dir: &Vec3) -> Vec3 {
    origin + dir * (p - origin).dot(dir)
}


/// Advances the intended cube pose by one tick.
pub fn hand_policy_step(kind: HandPolicyKind, p: &HandPolicy, state: &mut HandState, view: &HandView, dt: f64) {
    match kind {
        HandPolicyKind::Rigid => {}
        HandPolicyKind::Manual => {
            if let Some(goal) = view.manual_goal {
                let cur = state.intended;
                let mut delta = goal.position - cur.position;
                let max = p.max_speed * dt;
                if delta.norm() > max {
                    delta *= max / delta.norm();
                }
                let ang = geodesic_angle(&cur.orientation, &goal.orientation);
                let max_ang = 2.0 * dt;
                let t = if ang > max_ang { max_ang / ang } else { 1.0 };
                state.intended = Pose::new(cur.position + delta, slerp(&cur.orientation, &goal.orientation, t));
            }
        }
        HandPolicyKind::ArInformed if view.intent.is_some() => {
            let Some(t) = view.since_start else { return };
            if t < p.latency {
                return;
            }
            let (target, cand) = view.intent.expect("checked above");
            state.intended = move_grasp_frame(&state.intended, &cand.pose, &target, p, dt);
        }
        // without the overlay an informed hand has only the robot's motion to go on
        HandPolicyKind::ArInformed | HandPolicyKind::Reactive => reactive_step(p, state, view, dt),
    }
}

/// Without the overlay the hand reads only the gripper's motion. The servo
/// moves the gripper straight at its target, so the hand shifts the grasp
/// onto the gripper's line of travel. Depth and orientation stay
/// uncorrected. A hand that learns re-applies the last correction instead.
fn reactive_step(p: &HandPolicy, state: &mut HandState, view: &HandView, dt: f64) {
    let (Some(t), Some(ee)) = (view.since_start, view.delayed_ee) else { return };
    if t < p.latency {
        return;
    }
    if let Some((id, goal)) = state.fixed_goal {
        let cand = &view.candidates[id];
        state.intended = move_grasp_frame(&state.intended, &cand.pose, &goal, p, dt);
        return;
    }
    if let (Some(miss), false) = (state.learned, state.engaged) {
        let cand = &view.candidates[miss.candidate_id];
        let goal = miss.goal(&state.intended, cand);
        state.fixed_goal = Some((cand.id, goal));
        state.engaged = true;
        state.intended = move_grasp_frame(&state.intended, &cand.pose, &goal, p, dt);
        return;
    }
    let Some(v) = view.delayed_ee_velocity.filter(|v| v.norm() > MIN_READABLE_SPEED) else { return };
    let dir = v.normalize();
    let Some(cand) = headed_for(&state.intended, view.candidates, &ee, &dir) else { return };
    let grasp = state.intended.compose(&cand.pose);
    let on_line = project_on_line(&grasp.position, &ee.position, &dir);
    if !state.engaged && (on_line - grasp.position).norm() <= p.deadband_position {
        return;
    }
    state.engaged = true;
    let goal = Pose::new(on_line, grasp.orientation);
    state.intended = move_grasp_frame(&state.intended, &cand.pose, &goal, p, dt);
}
