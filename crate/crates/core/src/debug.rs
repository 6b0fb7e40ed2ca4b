//! Debug-mode step gating.
//!
//! With a [`Gate`] installed, every history primitive runs as a step made of
//! phases. Before each phase the node submits a [`DebugEnvelope`] carrying
//! its current history and blocks until the controller grants the phase.
//! After the last phase a completion envelope (`phase_index == phases.len()`)
//! reports the final history without blocking.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphExport, VersionGraph};
use crate::sync::{PeerLink, SyncMessage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Commit,
    Checkout,
    Push,
    Fetch,
    RespondToPush,
    RespondToFetch,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Commit => "commit",
            StepKind::Checkout => "checkout",
            StepKind::Push => "push",
            StepKind::Fetch => "fetch",
            StepKind::RespondToPush => "respond-to-push",
            StepKind::RespondToFetch => "respond-to-fetch",
        }
    }

    /// Phase list of a step. `merge` adds the run-merge phase to the kinds
    /// that receive remote history.
    pub fn phases(self, merge: bool) -> Vec<Phase> {
        use Phase::*;
        let receive = |mut head: Vec<Phase>| {
            head.extend([ReceiveData, DetectConflict]);
            if merge {
                head.push(RunMerge);
            }
            head.extend([ExtendGraph, GarbageCollect]);
            head
        };
        match self {
            StepKind::Commit => vec![ReceiveData, ExtendGraph, GarbageCollect],
            StepKind::Checkout => vec![ReadHead, ApplyToSnapshot],
            StepKind::Push => vec![SendRequest, ReceiveAck],
            StepKind::Fetch => receive(vec![SendRequest]),
            StepKind::RespondToPush => receive(vec![]),
            StepKind::RespondToFetch => vec![ComputeDelta, SendResponse],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    ReceiveData,
    DetectConflict,
    RunMerge,
    ExtendGraph,
    GarbageCollect,
    ComputeDelta,
    SendResponse,
    SendRequest,
    ReceiveAck,
    ReadHead,
    ApplyToSnapshot,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::ReceiveData => "receive-data",
            Phase::DetectConflict => "detect-conflict",
            Phase::RunMerge => "run-merge",
            Phase::ExtendGraph => "extend-graph",
            Phase::GarbageCollect => "garbage-collect",
            Phase::ComputeDelta => "compute-delta",
            Phase::SendResponse => "send-response",
            Phase::SendRequest => "send-request",
            Phase::ReceiveAck => "receive-ack",
            Phase::ReadHead => "read-head",
            Phase::ApplyToSnapshot => "apply-to-snapshot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugEnvelope {
    pub node_id: String,
    pub step_id: String,
    pub step_kind: StepKind,
    pub phase_index: usize,
    pub phases: Vec<Phase>,
    /// Requesting peer, for respond-to-* steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
    /// Peer address a send-request phase talks to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<SyncMessage>,
    pub history_export: GraphExport,
}

impl DebugEnvelope {
    pub fn is_completion(&self) -> bool {
        self.phase_index >= self.phases.len()
    }

    pub fn phase(&self) -> Option<Phase> {
        self.phases.get(self.phase_index).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateAction {
    Proceed,
    /// Not granted yet; submit the same envelope again.
    Hold,
    /// Granted, and the controller delivered the payload to the target.
    Forward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReply {
    pub action: GateAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forwarded_reply: Option<SyncMessage>,
}

impl GateReply {
    pub fn proceed() -> GateReply {
        GateReply {
            action: GateAction::Proceed,
            forwarded_reply: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registration {
    pub name: String,
    pub address: String,
    #[serde(default)]
    pub remote: Option<String>,
    #[serde(default)]
    pub types: Vec<String>,
}

/// Node-side view of the debug controller.
pub trait Gate: Send + Sync {
    fn register(&self, registration: &Registration) -> Result<()>;
    /// Blocks until the phase is granted (or returns the completion ack).
    fn submit(&self, envelope: DebugEnvelope) -> Result<GateReply>;
    /// The node's application flow has returned.
    fn finished(&self, node: &str) -> Result<()>;
}

static STEP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Node-side driver of one step. Without a gate every phase passes straight
/// through. The node's step lock is taken once the first phase is granted,
/// so steps at one node never interleave.
pub struct StepRun<'a> {
    gate: Option<&'a dyn Gate>,
    step_lock: &'a Mutex<()>,
    guard: Option<MutexGuard<'a, ()>>,
    graph: &'a Mutex<VersionGraph>,
    node: String,
    step_id: String,
    kind: StepKind,
    phases: Vec<Phase>,
    next: usize,
    origin: Option<String>,
    /// The peer request a respond-to step answers.
    request: Option<SyncMessage>,
}

impl<'a> StepRun<'a> {
    pub fn new(
        gate: Option<&'a Arc<dyn Gate>>,
        step_lock: &'a Mutex<()>,
        graph: &'a Mutex<VersionGraph>,
        node: &str,
        kind: StepKind,
        origin: Option<String>,
    ) -> StepRun<'a> {
        let seq = STEP_SEQ.fetch_add(1, Ordering::Relaxed);
        StepRun {
            gate: gate.map(|g| g.as_ref()),
            step_lock,
            guard: None,
            graph,
            node: node.to_string(),
            step_id: format!("{node}-{}-{seq}", std::process::id()),
            kind,
            phases: kind.phases(false),
            next: 0,
            origin,
            request: None,
        }
    }

    pub fn kind(&self) -> StepKind {
        self.kind
    }

    pub fn step_id(&self) -> &str {
        &self.step_id
    }

    pub fn debugging(&self) -> bool {
        self.gate.is_some()
    }

    /// Reports `msg` as the payload of every phase.
    pub fn attach_request(&mut self, msg: SyncMessage) {
        self.request = Some(msg);
    }

    /// Marks the step as needing the run-merge phase.
    pub fn require_merge(&mut self) {
        self.phases = self.kind.phases(true);
    }

    fn envelope(&self, index: usize, target: Option<String>, payload: Option<SyncMessage>) -> DebugEnvelope {
        let history_export = self.graph.lock().expect("graph lock poisoned").export();
        DebugEnvelope {
            node_id: self.node.clone(),
            step_id: self.step_id.clone(),
            step_kind: self.kind,
            phase_index: index,
            phases: self.phases.clone(),
            origin: self.origin.clone(),
            target,
            payload: payload.or_else(|| self.request.clone()),
            history_export,
        }
    }

    fn advance(&mut self, phase: Phase) -> Result<usize> {
        let index = self.next;
        match self.phases.get(index) {
            Some(p) if *p == phase => {
                self.next += 1;
                Ok(index)
            }
            other => Err(Error::Protocol(format!(
                "{} step expected phase {other:?}, got {phase:?}",
                self.kind.name()
            ))),
        }
    }

    fn submit(&mut self, index: usize, target: Option<String>, payload: Option<SyncMessage>) -> Result<GateReply> {
        let reply = match self.gate {
            None => GateReply::proceed(),
            Some(gate) => loop {
                let reply = gate.submit(self.envelope(index, target.clone(), payload.clone()))?;
                if reply.action != GateAction::Hold {
                    break reply;
                }
            },
        };
        if self.guard.is_none() {
            self.guard = Some(self.step_lock.lock().expect("step lock poisoned"));
        }
        Ok(reply)
    }

    /// Waits for permission to run `phase`.
    pub fn phase(&mut self, phase: Phase) -> Result<()> {
        let index = self.advance(phase)?;
        self.submit(index, None, None).map(|_| ())
    }

    /// Runs the send-request phase: the controller forwards `msg` in debug
    /// mode, otherwise it goes straight to `link`.
    pub fn send_request(&mut self, target: &str, msg: SyncMessage, link: &dyn PeerLink) -> Result<SyncMessage> {
        let index = self.advance(Phase::SendRequest)?;
        let reply = self.submit(index, Some(target.to_string()), Some(msg.clone()))?;
        match (reply.action, reply.forwarded_reply) {
            (GateAction::Forward, Some(answer)) => Ok(answer),
            (GateAction::Forward, None) => Err(Error::Gate("forward without reply".into())),
            _ => link.exchange(&msg),
        }
    }

    /// Reports completion with the final history.
    pub fn finish(mut self) -> Result<()> {
        let result = match self.gate {
            Some(gate) if self.guard.is_some() => {
                let index = self.phases.len();
                let env = self.envelope(index, None, None);
                gate.submit(env).map(|_| ())
            }
            _ => Ok(()),
        };
        self.guard.take();
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_lists() {
        use Phase::*;
        assert_eq!(StepKind::Commit.phases(false), vec![ReceiveData, ExtendGraph, GarbageCollect]);
        assert_eq!(
            StepKind::RespondToPush.phases(true),
            vec![ReceiveData, DetectConflict, RunMerge, ExtendGraph, GarbageCollect]
        );
        assert_eq!(StepKind::RespondToPush.phases(false).len(), 4);
        assert_eq!(StepKind::Fetch.phases(false)[0], SendRequest);
        assert_eq!(StepKind::Fetch.phases(true).len(), 6);
        assert_eq!(StepKind::RespondToFetch.phases(true), vec![ComputeDelta, SendResponse]);
        assert_eq!(StepKind::Push.phases(false), vec![SendRequest, ReceiveAck]);
        assert_eq!(StepKind::Checkout.phases(false), vec![ReadHead, ApplyToSnapshot]);
    }

    #[test]
    fn kebab_case_names() {
        assert_eq!(serde_json::to_value(StepKind::RespondToPush).unwrap(), "respond-to-push");
        assert_eq!(serde_json::to_value(Phase::GarbageCollect).unwrap(), "garbage-collect");
        assert_eq!(serde_json::to_value(GateAction::Forward).unwrap(), "forward");
    }

    #[test]
    fn ungated_steps_pass_through() {
        let lock = Mutex::new(());
        let graph = Mutex::new(VersionGraph::new());
        let mut step = StepRun::new(None, &lock, &graph, "n", StepKind::Commit, None);
        step.phase(Phase::ReceiveData).unwrap();
        assert!(step.phase(Phase::GarbageCollect).is_err());
        step.phase(Phase::ExtendGraph).unwrap();
        step.phase(Phase::GarbageCollect).unwrap();
        step.finish().unwrap();
        assert!(lock.try_lock().is_ok());
    }
}
