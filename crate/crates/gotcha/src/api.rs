//! JSON shapes of the controller API.

use got_core::{Phase, StepKind, SyncMessage, VersionId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Paused,
    FreeRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub step_id: String,
    pub kind: StepKind,
    pub phases: Vec<Phase>,
    /// Index of the next phase to run; `phases.len()` once done.
    pub current_phase: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// Some phase has been granted.
    pub started: bool,
    /// The node is blocked waiting for `current_phase` to be granted.
    pub awaiting: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<SyncMessage>,
    /// Grant sequence numbers of the executed phases.
    #[serde(default)]
    pub grants: Vec<u64>,
}

impl StepView {
    pub fn next_phase(&self) -> Option<Phase> {
        self.phases.get(self.current_phase).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsView {
    pub executed: Vec<StepView>,
    pub pending: Vec<StepView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeView {
    pub name: String,
    pub address: String,
    #[serde(default)]
    pub remote: Option<String>,
    #[serde(default)]
    pub types: Vec<String>,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopologyEdge {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub nodes: Vec<NodeView>,
    pub edges: Vec<TopologyEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakpointView {
    pub id: u64,
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hit {
    pub breakpoint_id: u64,
    pub predicate: String,
    pub node: String,
    pub head: VersionId,
    /// The node's head pending step when the hit was detected.
    #[serde(default)]
    pub step_id: Option<String>,
    #[serde(default)]
    pub step_kind: Option<StepKind>,
    #[serde(default)]
    pub phase: Option<Phase>,
    /// Grants issued so far.
    pub grant: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeStatus {
    pub name: String,
    pub finished: bool,
    pub pending: usize,
    /// The head pending step waits for a grant.
    pub awaiting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    pub mode: Mode,
    /// Application flows currently running (not parked at the controller).
    pub in_flight: i64,
    pub grants: u64,
    pub hits: Vec<Hit>,
    pub nodes: Vec<NodeStatus>,
}

impl Status {
    pub fn quiescent(&self) -> bool {
        self.in_flight == 0
    }

    pub fn all_finished(&self) -> bool {
        self.nodes.iter().all(|n| n.finished && n.pending == 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlAction {
    StepNode,
    StepAll,
    Play,
    Pause,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlRequest {
    pub action: ControlAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Promote,
    Demote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderRequest {
    pub step_id: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackRequest {
    pub version: VersionId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreakpointRequest {
    pub predicate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    NodeRegistered { node: String },
    HistoryUpdated { node: String, head: VersionId },
    StepQueued { node: String, step_id: String, kind: StepKind },
    PhaseExecuted { node: String, step_id: String, phase: Phase, grant: u64 },
    StepFinished { node: String, step_id: String },
    BreakpointHit(Hit),
    ModeChanged { mode: Mode },
}
