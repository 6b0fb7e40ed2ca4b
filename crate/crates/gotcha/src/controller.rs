//! Controller state machine: node records, step queues and grants.
//!
//! Every intercepted phase parks its node until granted. Per node only the
//! head of the pending queue may run; in free-run mode heads are granted as
//! soon as they park, in paused mode only by `step_node`/`step_all`.
//!
//! `in_flight` counts application flows that are executing. A flow parks
//! (-1) whenever one of its phases waits for a grant and resumes (+1) when
//! granted. A request forwarded to a peer carries its flow along, so the
//! responder's phases park and resume on the sender's behalf. The counter is
//! zero exactly when every flow is parked or finished.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Duration;

use got_core::{
    DebugEnvelope, GateAction, GateReply, GraphExport, Phase, Registration, State, StepKind, SyncMessage,
    VersionGraph, VersionId,
};
use thiserror::Error;
use tokio::sync::{broadcast, oneshot};

use crate::api::*;
use crate::breakpoint::{ParseError, Predicate};
use crate::transport::NodeTransport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` is already registered")]
    DuplicateNode(String),
    #[error("no pending phase at {0}")]
    NoPendingPhase(String),
    #[error("controller must be paused")]
    NotPaused,
    #[error("step {0} is active")]
    StepActive(String),
    #[error("step {0} cannot move further")]
    OutOfBounds(String),
    #[error("unknown step {0}")]
    UnknownStep(String),
    #[error("unknown breakpoint {0}")]
    UnknownBreakpoint(u64),
    #[error("breakpoint does not parse {0}")]
    Parse(ParseError),
    #[error("{0}")]
    History(String),
    #[error("node unreachable: {0}")]
    Transport(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    /// A remote controller refused the request.
    #[error("controller replied {status}: {message}")]
    Rejected { status: u16, message: String },
}

struct StepRecord {
    step_id: String,
    kind: StepKind,
    phases: Vec<Phase>,
    current_phase: usize,
    origin: Option<String>,
    target: Option<String>,
    payload: Option<SyncMessage>,
    started: bool,
    waiter: Option<oneshot::Sender<GateReply>>,
    grants: Vec<u64>,
}

impl StepRecord {
    fn view(&self) -> StepView {
        StepView {
            step_id: self.step_id.clone(),
            kind: self.kind,
            phases: self.phases.clone(),
            current_phase: self.current_phase,
            origin: self.origin.clone(),
            target: self.target.clone(),
            started: self.started,
            awaiting: self.waiter.is_some(),
            payload: self.payload.clone(),
            grants: self.grants.clone(),
        }
    }
}

struct NodeRecord {
    reg: Registration,
    history: GraphExport,
    head_state: State,
    pending: VecDeque<StepRecord>,
    executed: Vec<StepRecord>,
    finished: bool,
}

impl NodeRecord {
    fn set_history(&mut self, export: GraphExport) {
        // versions are immutable, so the same head means the same state
        if export.head == self.history.head {
            self.history = export;
            return;
        }
        match VersionGraph::from_export(&export).and_then(|g| g.head_state()) {
            Ok(state) => self.head_state = state,
            Err(e) => log::warn!("{}: unreadable history: {e}", self.reg.name),
        }
        self.history = export;
    }

    fn awaiting_head(&self) -> bool {
        self.pending.front().is_some_and(|s| s.waiter.is_some())
    }
}

struct Breakpoint {
    text: String,
    predicate: Predicate,
}

struct Inner {
    mode: Mode,
    nodes: BTreeMap<String, NodeRecord>,
    breakpoints: BTreeMap<u64, Breakpoint>,
    next_breakpoint: u64,
    /// (breakpoint, node) pairs that held at the last evaluation.
    holding: BTreeSet<(u64, String)>,
    hits: Vec<Hit>,
    in_flight: i64,
    grants: u64,
}

/// Result of submitting an envelope.
pub enum Submitted {
    Ready(GateReply),
    Wait(oneshot::Receiver<GateReply>),
}

pub struct Controller {
    inner: Mutex<Inner>,
    /// Signalled whenever `in_flight` may have changed.
    flows: Condvar,
    transport: Arc<dyn NodeTransport>,
    events: broadcast::Sender<Event>,
}

impl Controller {
    /// A controller starting in `mode`.
    pub fn new(transport: Arc<dyn NodeTransport>, mode: Mode) -> Arc<Controller> {
        let (events, _) = broadcast::channel(1024);
        Arc::new(Controller {
            inner: Mutex::new(Inner {
                mode,
                nodes: BTreeMap::new(),
                breakpoints: BTreeMap::new(),
                next_breakpoint: 1,
                holding: BTreeSet::new(),
                hits: Vec::new(),
                in_flight: 0,
                grants: 0,
            }),
            flows: Condvar::new(),
            transport,
            events,
        })
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Event> {
        self.events.subscribe()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("controller lock poisoned")
    }

    /// Blocks until every flow is parked or finished, up to `timeout`.
    pub fn wait_quiescent(&self, timeout: Duration) -> bool {
        let guard = self.lock();
        let (_guard, res) = self
            .flows
            .wait_timeout_while(guard, timeout, |inner| inner.in_flight != 0)
            .expect("controller lock poisoned");
        !res.timed_out()
    }

    fn emit(&self, event: Event) {
        // no subscribers is fine
        let _ = self.events.send(event);
    }

    pub fn register(&self, reg: Registration) -> Result<(), ControlError> {
        let mut inner = self.lock();
        if inner.nodes.contains_key(&reg.name) {
            return Err(ControlError::DuplicateNode(reg.name));
        }
        let name = reg.name.clone();
        inner.nodes.insert(
            name.clone(),
            NodeRecord {
                reg,
                history: VersionGraph::new().export(),
                head_state: State::new(),
                pending: VecDeque::new(),
                executed: Vec::new(),
                finished: false,
            },
        );
        inner.in_flight += 1;
        drop(inner);
        self.flows.notify_all();
        log::info!("registered {name}");
        self.emit(Event::NodeRegistered { node: name });
        Ok(())
    }

    /// The node's application flow returned.
    pub fn finished(&self, node: &str) -> Result<(), ControlError> {
        let mut inner = self.lock();
        let rec = inner
            .nodes
            .get_mut(node)
            .ok_or_else(|| ControlError::UnknownNode(node.to_string()))?;
        if !rec.finished {
            rec.finished = true;
            inner.in_flight -= 1;
        }
        drop(inner);
        self.flows.notify_all();
        Ok(())
    }

    pub fn submit(&self, env: DebugEnvelope) -> Result<Submitted, ControlError> {
        let mut inner = self.lock();
        let node = env.node_id.clone();
        let rec = inner
            .nodes
            .get_mut(&node)
            .ok_or_else(|| ControlError::UnknownNode(node.clone()))?;
        let completion = env.is_completion();
        rec.set_history(env.history_export);
        let head = rec.history.head.clone();
        let mut events = vec![Event::HistoryUpdated {
            node: node.clone(),
            head,
        }];

        let idx = match rec.pending.iter().position(|s| s.step_id == env.step_id) {
            Some(i) => i,
            None => {
                rec.pending.push_back(StepRecord {
                    step_id: env.step_id.clone(),
                    kind: env.step_kind,
                    phases: env.phases.clone(),
                    current_phase: 0,
                    origin: env.origin.clone(),
                    target: None,
                    payload: None,
                    started: false,
                    waiter: None,
                    grants: Vec::new(),
                });
                events.push(Event::StepQueued {
                    node: node.clone(),
                    step_id: env.step_id.clone(),
                    kind: env.step_kind,
                });
                rec.pending.len() - 1
            }
        };

        let reply = if completion {
            let mut step = rec.pending.remove(idx).expect("index from position");
            step.phases = env.phases.clone();
            step.current_phase = env.phases.len();
            step.waiter = None;
            rec.executed.push(step);
            events.push(Event::StepFinished {
                node: node.clone(),
                step_id: env.step_id.clone(),
            });
            None
        } else {
            let (tx, rx) = oneshot::channel();
            let step = &mut rec.pending[idx];
            step.phases = env.phases.clone();
            step.current_phase = env.phase_index;
            step.target = env.target.clone();
            step.payload = env.payload.clone();
            step.waiter = Some(tx);
            inner.in_flight -= 1;
            Some(rx)
        };

        self.evaluate_breakpoints(&mut inner, &mut events);
        if inner.mode == Mode::FreeRun {
            self.grant_heads(&mut inner, &mut events);
        }
        drop(inner);
        self.flows.notify_all();
        for e in events {
            self.emit(e);
        }
        Ok(match reply {
            None => Submitted::Ready(GateReply::proceed()),
            Some(rx) => Submitted::Wait(rx),
        })
    }

    fn evaluate_breakpoints(&self, inner: &mut Inner, events: &mut Vec<Event>) {
        let mut now = BTreeSet::new();
        let mut fresh = Vec::new();
        for (id, bp) in &inner.breakpoints {
            for (name, rec) in &inner.nodes {
                if bp.predicate.eval(&rec.head_state) {
                    now.insert((*id, name.clone()));
                    if !inner.holding.contains(&(*id, name.clone())) {
                        let head = rec.pending.front();
                        fresh.push(Hit {
                            breakpoint_id: *id,
                            predicate: bp.text.clone(),
                            node: name.clone(),
                            head: rec.history.head.clone(),
                            step_id: head.map(|s| s.step_id.clone()),
                            step_kind: head.map(|s| s.kind),
                            phase: head.and_then(|s| s.phases.get(s.current_phase).copied()),
                            grant: inner.grants,
                        });
                    }
                }
            }
        }
        inner.holding = now;
        if fresh.is_empty() {
            return;
        }
        for hit in &fresh {
            log::info!("breakpoint {} hit at {} ({})", hit.breakpoint_id, hit.node, hit.predicate);
            events.push(Event::BreakpointHit(hit.clone()));
        }
        inner.hits.extend(fresh);
        if inner.mode == Mode::FreeRun {
            inner.mode = Mode::Paused;
            events.push(Event::ModeChanged { mode: Mode::Paused });
        }
    }

    /// Grants every awaiting head step.
    fn grant_heads(&self, inner: &mut Inner, events: &mut Vec<Event>) -> usize {
        let names: Vec<String> = inner
            .nodes
            .iter()
            .filter(|(_, r)| r.awaiting_head())
            .map(|(n, _)| n.clone())
            .collect();
        for name in &names {
            self.grant(inner, name, events);
        }
        names.len()
    }

    fn grant(&self, inner: &mut Inner, node: &str, events: &mut Vec<Event>) {
        inner.grants += 1;
        inner.in_flight += 1;
        let grant = inner.grants;
        let rec = inner.nodes.get_mut(node).expect("caller checked");
        let step = rec.pending.front_mut().expect("caller checked");
        let tx = step.waiter.take().expect("caller checked");
        step.started = true;
        step.grants.push(grant);
        let phase = step.phases[step.current_phase];
        events.push(Event::PhaseExecuted {
            node: node.to_string(),
            step_id: step.step_id.clone(),
            phase,
            grant,
        });
        log::debug!("grant {grant}: {node} {} {phase:?}", step.kind.name());
        match (phase, step.target.clone(), step.payload.clone()) {
            (Phase::SendRequest, Some(target), Some(payload)) => {
                let transport = self.transport.clone();
                std::thread::spawn(move || {
                    let answer = transport
                        .exchange(&target, &payload)
                        .unwrap_or_else(|e| SyncMessage::from_error(&e));
                    let _ = tx.send(GateReply {
                        action: GateAction::Forward,
                        forwarded_reply: Some(answer),
                    });
                });
            }
            _ => {
                let _ = tx.send(GateReply::proceed());
            }
        }
    }

    pub fn control(&self, req: ControlRequest) -> Result<usize, ControlError> {
        let mut inner = self.lock();
        let mut events = Vec::new();
        let granted = match req.action {
            ControlAction::Play => {
                if inner.mode != Mode::FreeRun {
                    inner.mode = Mode::FreeRun;
                    events.push(Event::ModeChanged { mode: Mode::FreeRun });
                }
                self.grant_heads(&mut inner, &mut events)
            }
            ControlAction::Pause => {
                if inner.mode != Mode::Paused {
                    inner.mode = Mode::Paused;
                    events.push(Event::ModeChanged { mode: Mode::Paused });
                }
                0
            }
            ControlAction::StepNode => {
                if inner.mode != Mode::Paused {
                    return Err(ControlError::NotPaused);
                }
                let node = req
                    .node
                    .ok_or_else(|| ControlError::BadRequest("step_node needs a node".into()))?;
                let rec = inner
                    .nodes
                    .get(&node)
                    .ok_or_else(|| ControlError::UnknownNode(node.clone()))?;
                if !rec.awaiting_head() {
                    return Err(ControlError::NoPendingPhase(node));
                }
                self.grant(&mut inner, &node, &mut events);
                1
            }
            ControlAction::StepAll => {
                if inner.mode != Mode::Paused {
                    return Err(ControlError::NotPaused);
                }
                let n = self.grant_heads(&mut inner, &mut events);
                if n == 0 {
                    return Err(ControlError::NoPendingPhase("any node".into()));
                }
                n
            }
        };
        drop(inner);
        self.flows.notify_all();
        for e in events {
            self.emit(e);
        }
        Ok(granted)
    }

    pub fn reorder(&self, node: &str, req: ReorderRequest) -> Result<(), ControlError> {
        let mut inner = self.lock();
        let rec = inner
            .nodes
            .get_mut(node)
            .ok_or_else(|| ControlError::UnknownNode(node.to_string()))?;
        let i = rec
            .pending
            .iter()
            .position(|s| s.step_id == req.step_id)
            .ok_or_else(|| ControlError::UnknownStep(req.step_id.clone()))?;
        let j = match req.direction {
            Direction::Promote if i > 0 => i - 1,
            Direction::Demote if i + 1 < rec.pending.len() => i + 1,
            _ => return Err(ControlError::OutOfBounds(req.step_id)),
        };
        for k in [i, j] {
            if rec.pending[k].started {
                return Err(ControlError::StepActive(rec.pending[k].step_id.clone()));
            }
        }
        rec.pending.swap(i, j);
        let mut events = Vec::new();
        if inner.mode == Mode::FreeRun {
            self.grant_heads(&mut inner, &mut events);
        }
        drop(inner);
        self.flows.notify_all();
        for e in events {
            self.emit(e);
        }
        Ok(())
    }

    /// Resets a node's head to an ancestor through the node itself.
    pub fn rollback(&self, node: &str, version: &VersionId) -> Result<(), ControlError> {
        let address = {
            let inner = self.lock();
            if inner.mode != Mode::Paused {
                return Err(ControlError::NotPaused);
            }
            let rec = inner
                .nodes
                .get(node)
                .ok_or_else(|| ControlError::UnknownNode(node.to_string()))?;
            if let Some(s) = rec.pending.iter().find(|s| s.started) {
                return Err(ControlError::StepActive(s.step_id.clone()));
            }
            let graph = VersionGraph::from_export(&rec.history).map_err(|e| ControlError::History(e.to_string()))?;
            if !graph.contains(version) || !graph.is_ancestor(version, graph.head()) {
                return Err(ControlError::History(format!(
                    "{version} is not an ancestor of {}",
                    graph.head()
                )));
            }
            if version == graph.head() {
                return Ok(());
            }
            rec.reg.address.clone()
        };
        let export = self
            .transport
            .rollback(&address, version)
            .map_err(|e| ControlError::Transport(e.to_string()))?;
        let mut inner = self.lock();
        let rec = inner.nodes.get_mut(node).expect("nodes are never removed");
        rec.set_history(export);
        let head = rec.history.head.clone();
        let mut events = vec![Event::HistoryUpdated {
            node: node.to_string(),
            head,
        }];
        self.evaluate_breakpoints(&mut inner, &mut events);
        drop(inner);
        self.flows.notify_all();
        for e in events {
            self.emit(e);
        }
        Ok(())
    }

    pub fn add_breakpoint(&self, text: &str) -> Result<BreakpointView, ControlError> {
        let predicate = Predicate::parse(text).map_err(ControlError::Parse)?;
        let mut inner = self.lock();
        let id = inner.next_breakpoint;
        inner.next_breakpoint += 1;
        // a predicate that already holds is reported at its next change only
        let holding: Vec<(u64, String)> = inner
            .nodes
            .iter()
            .filter(|(_, rec)| predicate.eval(&rec.head_state))
            .map(|(name, _)| (id, name.clone()))
            .collect();
        inner.holding.extend(holding);
        inner.breakpoints.insert(
            id,
            Breakpoint {
                text: text.to_string(),
                predicate,
            },
        );
        Ok(BreakpointView {
            id,
            predicate: text.to_string(),
        })
    }

    pub fn remove_breakpoint(&self, id: u64) -> Result<(), ControlError> {
        let mut inner = self.lock();
        inner
            .breakpoints
            .remove(&id)
            .map(|_| ())
            .ok_or(ControlError::UnknownBreakpoint(id))?;
        inner.holding.retain(|(b, _)| *b != id);
        Ok(())
    }

    pub fn breakpoints(&self) -> Vec<BreakpointView> {
        self.lock()
            .breakpoints
            .iter()
            .map(|(id, bp)| BreakpointView {
                id: *id,
                predicate: bp.text.clone(),
            })
            .collect()
    }

    pub fn status(&self) -> Status {
        let inner = self.lock();
        Status {
            mode: inner.mode,
            in_flight: inner.in_flight,
            grants: inner.grants,
            hits: inner.hits.clone(),
            nodes: inner
                .nodes
                .values()
                .map(|r| NodeStatus {
                    name: r.reg.name.clone(),
                    finished: r.finished,
                    pending: r.pending.len(),
                    awaiting: r.awaiting_head(),
                })
                .collect(),
        }
    }

    pub fn topology(&self) -> Topology {
        let inner = self.lock();
        let nodes: Vec<NodeView> = inner
            .nodes
            .values()
            .map(|r| NodeView {
                name: r.reg.name.clone(),
                address: r.reg.address.clone(),
                remote: r.reg.remote.clone(),
                types: r.reg.types.clone(),
                finished: r.finished,
            })
            .collect();
        let edges = nodes
            .iter()
            .filter_map(|n| {
                let remote = n.remote.as_ref()?;
                let to = nodes.iter().find(|m| same_address(&m.address, remote))?;
                Some(TopologyEdge {
                    from: n.name.clone(),
                    to: to.name.clone(),
                })
            })
            .collect();
        Topology { nodes, edges }
    }

    pub fn history(&self, node: &str) -> Result<GraphExport, ControlError> {
        self.lock()
            .nodes
            .get(node)
            .map(|r| r.history.clone())
            .ok_or_else(|| ControlError::UnknownNode(node.to_string()))
    }

    pub fn steps(&self, node: &str) -> Result<StepsView, ControlError> {
        let inner = self.lock();
        let rec = inner
            .nodes
            .get(node)
            .ok_or_else(|| ControlError::UnknownNode(node.to_string()))?;
        Ok(StepsView {
            executed: rec.executed.iter().map(StepRecord::view).collect(),
            pending: rec.pending.iter().map(StepRecord::view).collect(),
        })
    }

    /// State of `version` (head when absent) in the node's latest history.
    pub fn state(&self, node: &str, version: Option<&VersionId>) -> Result<State, ControlError> {
        let export = self.history(node)?;
        let graph = VersionGraph::from_export(&export).map_err(|e| ControlError::History(e.to_string()))?;
        let v = version.unwrap_or(graph.head());
        graph.state_at(v).map_err(|e| ControlError::History(e.to_string()))
    }
}

/// `0.0.0.0:p`, `localhost:p` and `127.0.0.1:p` name the same local port.
fn same_address(a: &str, b: &str) -> bool {
    fn norm(s: &str) -> String {
        let s = s.trim_start_matches("http://").trim_end_matches('/');
        match s.rsplit_once(':') {
            Some((host, port)) if matches!(host, "localhost" | "0.0.0.0" | "127.0.0.1") => format!("local:{port}"),
            _ => s.to_string(),
        }
    }
    norm(a) == norm(b)
}

impl got_core::Gate for Controller {
    fn register(&self, registration: &Registration) -> got_core::Result<()> {
        Controller::register(self, registration.clone()).map_err(|e| got_core::Error::Gate(e.to_string()))
    }

    fn submit(&self, envelope: DebugEnvelope) -> got_core::Result<GateReply> {
        match Controller::submit(self, envelope).map_err(|e| got_core::Error::Gate(e.to_string()))? {
            Submitted::Ready(reply) => Ok(reply),
            Submitted::Wait(rx) => rx
                .blocking_recv()
                .map_err(|_| got_core::Error::Gate("controller dropped the step".into())),
        }
    }

    fn finished(&self, node: &str) -> got_core::Result<()> {
        Controller::finished(self, node).map_err(|e| got_core::Error::Gate(e.to_string()))
    }
}
