//! The shared, thread-safe half of a node: its version graph, schemas and
//! merge function, plus the responder side of the sync protocol.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::debug::{Gate, Phase, StepKind, StepRun};
use crate::error::Result;
use crate::graph::{GraphExport, MergePlan, MergeReport, Resolver, VersionGraph, VersionId};
use crate::schema::Registry;
use crate::state::Diff;
use crate::sync::SyncMessage;

pub struct Repository {
    name: String,
    registry: Arc<Registry>,
    graph: Mutex<VersionGraph>,
    step_lock: Mutex<()>,
    resolver: Arc<dyn Resolver>,
    gate: Option<Arc<dyn Gate>>,
}

impl Repository {
    pub fn new(
        name: &str,
        registry: Arc<Registry>,
        resolver: Arc<dyn Resolver>,
        gate: Option<Arc<dyn Gate>>,
    ) -> Arc<Repository> {
        Arc::new(Repository {
            name: name.to_string(),
            registry,
            graph: Mutex::new(VersionGraph::new()),
            step_lock: Mutex::new(()),
            resolver,
            gate,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn resolver(&self) -> &dyn Resolver {
        self.resolver.as_ref()
    }

    pub fn gate(&self) -> Option<&Arc<dyn Gate>> {
        self.gate.as_ref()
    }

    pub fn graph(&self) -> MutexGuard<'_, VersionGraph> {
        self.graph.lock().expect("graph lock poisoned")
    }

    pub fn head(&self) -> VersionId {
        self.graph().head().clone()
    }

    pub fn export(&self) -> GraphExport {
        self.graph().export()
    }

    /// Runs `body` as one step and always reports its completion.
    pub fn run_step<T>(
        &self,
        kind: StepKind,
        origin: Option<String>,
        body: impl FnOnce(&mut StepRun<'_>) -> Result<T>,
    ) -> Result<T> {
        let mut step = StepRun::new(self.gate.as_ref(), &self.step_lock, &self.graph, &self.name, kind, origin);
        let out = body(&mut step);
        let done = step.finish();
        let out = out?;
        done?;
        Ok(out)
    }

    /// Receives the remote version `end` (reached from `start` by `diff`)
    /// and folds it into head, phase by phase. `peer_ref` is set to `end`.
    pub fn receive(
        &self,
        step: &mut StepRun<'_>,
        start: &VersionId,
        end: &VersionId,
        diff: Diff,
        peer_ref: &str,
    ) -> Result<MergeReport> {
        step.phase(Phase::ReceiveData)?;
        diff.check(&self.registry)?;
        self.graph().receive_data(start, end, diff)?;

        step.phase(Phase::DetectConflict)?;
        let plan = self.graph().plan_merge(end)?;
        let mut merged = None;
        if let MergePlan::Merge(pending) = &plan {
            if pending.conflicted() {
                step.require_merge();
                step.phase(Phase::RunMerge)?;
                merged = Some(pending.resolve(self.resolver.as_ref(), &self.registry)?);
            }
        }

        step.phase(Phase::ExtendGraph)?;
        let report = {
            let mut g = self.graph();
            let report = match (&plan, merged) {
                (MergePlan::UpToDate, _) => MergeReport {
                    merged_version: g.head().clone(),
                    conflicted: false,
                    resolver_invoked: false,
                },
                (MergePlan::FastForward(to), _) => {
                    g.fast_forward(to)?;
                    MergeReport {
                        merged_version: to.clone(),
                        conflicted: false,
                        resolver_invoked: false,
                    }
                }
                (MergePlan::Merge(pending), merged) => {
                    let state = match merged {
                        Some(state) => state,
                        None => pending.resolve(self.resolver.as_ref(), &self.registry)?,
                    };
                    MergeReport {
                        merged_version: g.complete_merge(pending, &state)?,
                        conflicted: pending.conflicted(),
                        resolver_invoked: pending.conflicted(),
                    }
                }
            };
            g.update_ref(peer_ref, end)?;
            report
        };
        log::debug!(
            "{}: received {} from {peer_ref}, head {}",
            self.name,
            end.short(),
            report.merged_version.short()
        );

        step.phase(Phase::GarbageCollect)?;
        self.graph().garbage_collect()?;
        Ok(report)
    }

    /// Answers one request from a peer.
    pub fn serve(&self, msg: SyncMessage) -> SyncMessage {
        let request = msg.clone();
        let out = match msg {
            SyncMessage::PushRequest {
                sender_id,
                start_version,
                end_version,
                diff,
            } => self.respond_to_push(request, sender_id, start_version, end_version, diff),
            SyncMessage::FetchRequest {
                requester_id,
                from_version,
            } => self.respond_to_fetch(request, requester_id, from_version),
            other => return SyncMessage::error("unexpected", format!("cannot serve {}", other.kind())),
        };
        out.unwrap_or_else(|e| SyncMessage::from_error(&e))
    }

    fn respond_to_push(
        &self,
        request: SyncMessage,
        sender: String,
        start: VersionId,
        end: VersionId,
        diff: Diff,
    ) -> Result<SyncMessage> {
        self.run_step(StepKind::RespondToPush, Some(sender.clone()), |step| {
            step.attach_request(request);
            let report = self.receive(step, &start, &end, diff, &sender)?;
            Ok(SyncMessage::PushAck {
                accepted_head: report.merged_version,
            })
        })
    }

    fn respond_to_fetch(&self, request: SyncMessage, requester: String, from: Option<VersionId>) -> Result<SyncMessage> {
        self.run_step(StepKind::RespondToFetch, Some(requester.clone()), |step| {
            step.attach_request(request);
            step.phase(Phase::ComputeDelta)?;
            let (base_version, diff, new_head) = {
                let g = self.graph();
                let base = known_base(&g, from.as_ref());
                let (diff, head) = g.delta_between(&base)?;
                (base, diff, head)
            };
            step.phase(Phase::SendResponse)?;
            self.graph().update_ref(&requester, &new_head)?;
            Ok(SyncMessage::FetchResponse {
                base_version,
                diff,
                new_head,
            })
        })
    }

    /// Debugger rollback: resets head to `v` and drops its descendants.
    pub fn rollback(&self, v: &VersionId) -> Result<BTreeSet<VersionId>> {
        let _guard = self.step_lock.lock().expect("step lock poisoned");
        self.graph().rollback(v)
    }
}

/// `candidate` if it is an ancestor of head, otherwise ROOT.
pub fn known_base(graph: &VersionGraph, candidate: Option<&VersionId>) -> VersionId {
    match candidate {
        Some(v) if graph.contains(v) && graph.is_ancestor(v, graph.head()) => v.clone(),
        _ => VersionId::root(),
    }
}
