//! Immutable per-tick view of the world, the payload streamed to clients.

use serde::{Deserialize, Serialize};

use crate::config::{HandPolicyKind, TrialCondition};
use crate::kinematics::DOF;
use crate::se3::Pose;
use crate::sim::{Engine, Holder, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionView {
    pub candidate_id: usize,
    pub pose: Pose,
    pub frozen: bool,
}

/// Intent overlays. Always sent; `visible` is false without AR, so a client
/// must draw nothing from this block in that case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visualization {
    pub visible: bool,
    /// Estimated cube pose, drawn as a wireframe.
    pub object_wireframe_pose: Option<Pose>,
    /// Selected grasp, drawn as a translucent gripper.
    pub gripper_ghost_pose: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub clock: f64,
    pub phase: Phase,
    pub condition: TrialCondition,
    pub policy: HandPolicyKind,
    pub joints: [f64; DOF],
    pub end_effector: Pose,
    pub cube_true: Pose,
    pub cube_holder: Holder,
    /// Filtered estimate, with the faked error when the condition has one.
    pub cube_estimate: Option<Pose>,
    pub selection: Option<SelectionView>,
    pub gripper_aperture: f64,
    pub visible_markers: Vec<usize>,
    pub successes: usize,
    pub failures: usize,
    pub finished: bool,
    pub visualization: Visualization,
}

impl StateSnapshot {
    pub fn of(engine: &Engine) -> Self {
        let w = engine.world();
        let selection = w.perception.selection.map(|s| SelectionView {
            candidate_id: s.candidate_id,
            pose: s.world_pose,
            frozen: s.frozen,
        });
        let mut joints = [0.0; DOF];
        joints.copy_from_slice(w.joints.positions.as_slice());
        StateSnapshot {
            tick: w.tick,
            clock: w.clock,
            phase: w.phase,
            condition: w.condition,
            policy: engine.policy(),
            joints,
            end_effector: engine.end_effector(),
            cube_true: w.cube,
            cube_holder: w.holder,
            cube_estimate: w.perception.filtered,
            selection,
            gripper_aperture: w.gripper_aperture,
            visible_markers: w.perception.visible.clone(),
            successes: engine.successes(),
            failures: engine.failures(),
            finished: engine.is_finished(),
            visualization: Visualization {
                visible: w.condition.ar,
                object_wireframe_pose: w.perception.filtered,
                gripper_ghost_pose: selection.map(|s| s.pose),
            },
        }
    }
}
