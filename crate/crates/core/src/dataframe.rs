//! The application-facing API: a snapshot of shared objects with staged
//! writes, on top of the node's version graph.

use std::sync::Arc;

use crate::debug::{Phase, StepKind};
use crate::error::{Error, Result};
use crate::graph::{VersionId, SNAPSHOT_REF};
use crate::repo::{known_base, Repository};
use crate::schema::ObjectState;
use crate::state::{apply_diff, compose_diffs, diff_states, Diff, ObjectDelta, ObjectKey, State};
use crate::sync::{PeerLink, SyncMessage, UNKNOWN_VERSION};
use crate::value::Value;

/// Local view of the shared objects. `materialized` already includes the
/// `staged` writes, which are relative to `base_version`.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub base_version: VersionId,
    pub materialized: State,
    pub staged: Diff,
}

impl Default for Snapshot {
    fn default() -> Snapshot {
        Snapshot {
            base_version: VersionId::root(),
            materialized: State::new(),
            staged: Diff::new(),
        }
    }
}

/// Reference to an object read from the snapshot. Invalidated by a checkout
/// that changes the snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectHandle {
    key: ObjectKey,
    generation: u64,
}

impl ObjectHandle {
    pub fn key(&self) -> &ObjectKey {
        &self.key
    }

    pub fn pkey(&self) -> &Value {
        &self.key.pkey
    }
}

struct Remote {
    address: String,
    link: Arc<dyn PeerLink>,
}

pub struct Dataframe {
    repo: Arc<Repository>,
    snapshot: Snapshot,
    generation: u64,
    remote: Option<Remote>,
}

impl Dataframe {
    pub fn new(repo: Arc<Repository>) -> Dataframe {
        Dataframe {
            repo,
            snapshot: Snapshot::default(),
            generation: 0,
            remote: None,
        }
    }

    /// Sets the peer used by push and fetch. Its ref is named by `address`.
    pub fn with_remote(mut self, address: &str, link: Arc<dyn PeerLink>) -> Dataframe {
        self.remote = Some(Remote {
            address: address.to_string(),
            link,
        });
        self
    }

    pub fn repo(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn base_version(&self) -> &VersionId {
        &self.snapshot.base_version
    }

    pub fn has_staged(&self) -> bool {
        !self.snapshot.staged.is_empty()
    }

    fn handle(&self, key: ObjectKey) -> ObjectHandle {
        ObjectHandle {
            key,
            generation: self.generation,
        }
    }

    pub fn read_one(&self, type_name: &str, pkey: impl Into<Value>) -> Result<Option<ObjectHandle>> {
        self.repo.registry().get(type_name)?;
        let key = ObjectKey::new(type_name, pkey);
        Ok(self.snapshot.materialized.get_key(&key).map(|_| self.handle(key)))
    }

    /// Handles to every object of `type_name`, in primary-key order.
    pub fn read_all(&self, type_name: &str) -> Result<Vec<ObjectHandle>> {
        self.repo.registry().get(type_name)?;
        Ok(self
            .snapshot
            .materialized
            .objects(type_name)
            .map(|o| self.handle(ObjectKey::new(type_name, o.pkey.clone())))
            .collect())
    }

    /// Clones of every object of `type_name`, in primary-key order.
    pub fn objects(&self, type_name: &str) -> Result<Vec<ObjectState>> {
        self.repo.registry().get(type_name)?;
        Ok(self.snapshot.materialized.objects(type_name).cloned().collect())
    }

    pub fn object(&self, handle: &ObjectHandle) -> Result<&ObjectState> {
        if handle.generation != self.generation {
            return Err(Error::StaleHandle);
        }
        self.snapshot
            .materialized
            .get_key(&handle.key)
            .ok_or_else(|| Error::MissingObject(handle.key.to_string()))
    }

    pub fn get(&self, handle: &ObjectHandle, dim: &str) -> Result<Value> {
        let obj = self.object(handle)?;
        obj.get(dim).cloned().ok_or_else(|| Error::NonConforming {
            type_name: obj.type_name.clone(),
            detail: format!("unknown dimension `{dim}`"),
        })
    }

    pub fn set(&mut self, handle: &ObjectHandle, dim: &str, value: impl Into<Value>) -> Result<()> {
        self.object(handle)?;
        let schema = self.repo.registry().get(&handle.key.type_name)?;
        if schema.primary_key == dim {
            return Err(Error::PrimaryKeyWrite(dim.to_string()));
        }
        let dims = [(dim.to_string(), value.into())].into_iter().collect();
        schema.check_partial(&dims)?;
        let mut delta = Diff::new();
        delta.insert(handle.key.clone(), ObjectDelta::Modified(dims));
        self.stage(delta)
    }

    pub fn add_one(&mut self, obj: ObjectState) -> Result<ObjectHandle> {
        self.repo.registry().check_object(&obj)?;
        let key = ObjectKey::new(&obj.type_name, obj.pkey.clone());
        self.stage(Diff::new_object(&obj))?;
        Ok(self.handle(key))
    }

    /// Adds every object or none of them.
    pub fn add_many(&mut self, objs: impl IntoIterator<Item = ObjectState>) -> Result<Vec<ObjectHandle>> {
        let mut delta = Diff::new();
        let mut keys = Vec::new();
        for obj in objs {
            self.repo.registry().check_object(&obj)?;
            let key = ObjectKey::new(&obj.type_name, obj.pkey.clone());
            if delta.get(&key).is_some() {
                return Err(Error::ObjectExists(key.to_string()));
            }
            delta = compose_diffs(&delta, &Diff::new_object(&obj))?;
            keys.push(key);
        }
        self.stage(delta)?;
        Ok(keys.into_iter().map(|k| self.handle(k)).collect())
    }

    pub fn delete_one(&mut self, type_name: &str, pkey: impl Into<Value>) -> Result<()> {
        self.repo.registry().get(type_name)?;
        let mut delta = Diff::new();
        delta.insert(ObjectKey::new(type_name, pkey), ObjectDelta::Deleted);
        self.stage(delta)
    }

    pub fn delete_all(&mut self, type_name: &str) -> Result<usize> {
        self.repo.registry().get(type_name)?;
        let delta: Diff = self
            .snapshot
            .materialized
            .objects(type_name)
            .map(|o| (ObjectKey::new(type_name, o.pkey.clone()), ObjectDelta::Deleted))
            .collect();
        let n = delta.len();
        self.stage(delta)?;
        Ok(n)
    }

    fn stage(&mut self, delta: Diff) -> Result<()> {
        let materialized = apply_diff(&self.snapshot.materialized, &delta)?;
        self.snapshot.staged = compose_diffs(&self.snapshot.staged, &delta)?;
        self.snapshot.materialized = materialized;
        Ok(())
    }

    /// Publishes the staged writes as a new version off the snapshot's base.
    /// If head moved past the base meanwhile, the new version is merged into
    /// head. The snapshot itself is left as is. No-op without staged writes.
    pub fn commit(&mut self) -> Result<VersionId> {
        if self.snapshot.staged.is_empty() {
            return Ok(self.snapshot.base_version.clone());
        }
        let repo = self.repo.clone();
        let snapshot = &self.snapshot;
        let v = repo.run_step(StepKind::Commit, None, |step| {
            step.phase(Phase::ReceiveData)?;
            let staged = snapshot.staged.clone();

            step.phase(Phase::ExtendGraph)?;
            let v = {
                let mut g = repo.graph();
                let (start, diff) = if g.contains(&snapshot.base_version) {
                    (snapshot.base_version.clone(), staged)
                } else {
                    // base was rolled back underneath the snapshot
                    let start = g.get_ref(SNAPSHOT_REF).cloned().unwrap_or_else(VersionId::root);
                    let diff = diff_states(&g.state_at(&start)?, &snapshot.materialized);
                    (start, diff)
                };
                let v = g.extend(&start, diff)?;
                if g.head() != &v {
                    g.fold_in(&v, repo.resolver(), repo.registry())?;
                }
                g.update_ref(SNAPSHOT_REF, &v)?;
                v
            };

            step.phase(Phase::GarbageCollect)?;
            repo.graph().garbage_collect()?;
            Ok(v)
        })?;
        self.snapshot.base_version = v.clone();
        self.snapshot.staged = Diff::new();
        Ok(v)
    }

    /// Moves the snapshot to head. Fails while writes are staged.
    pub fn checkout(&mut self) -> Result<VersionId> {
        if self.has_staged() {
            return Err(Error::StagedChanges);
        }
        let repo = self.repo.clone();
        let (head, state) = repo.run_step(StepKind::Checkout, None, |step| {
            step.phase(Phase::ReadHead)?;
            let (head, state) = {
                let g = repo.graph();
                (g.head().clone(), g.head_state()?)
            };
            step.phase(Phase::ApplyToSnapshot)?;
            repo.graph().update_ref(SNAPSHOT_REF, &head)?;
            Ok((head, state))
        })?;
        if head != self.snapshot.base_version || state != self.snapshot.materialized {
            self.snapshot.base_version = head.clone();
            self.snapshot.materialized = state;
            self.generation += 1;
        }
        Ok(head)
    }

    fn remote(&self) -> Result<&Remote> {
        self.remote.as_ref().ok_or(Error::NoRemote)
    }

    /// Sends head to the remote. Returns the remote's head after it folded
    /// the update in.
    pub fn push(&mut self) -> Result<VersionId> {
        match self.push_from(false)? {
            Some(head) => Ok(head),
            // the remote lost our last known version; resend everything
            None => self
                .push_from(true)?
                .ok_or_else(|| Error::Protocol("remote rejected a push from ROOT".into())),
        }
    }

    fn push_from(&self, from_root: bool) -> Result<Option<VersionId>> {
        let remote = self.remote()?;
        let repo = &self.repo;
        repo.run_step(StepKind::Push, None, |step| {
            let (msg, sent) = {
                let g = repo.graph();
                let from = if from_root {
                    VersionId::root()
                } else {
                    known_base(&g, g.get_ref(&remote.address))
                };
                let (diff, head) = g.delta_between(&from)?;
                let msg = SyncMessage::PushRequest {
                    sender_id: repo.name().to_string(),
                    start_version: from,
                    end_version: head.clone(),
                    diff,
                };
                (msg, head)
            };
            match step.send_request(&remote.address, msg, remote.link.as_ref())? {
                SyncMessage::PushAck { accepted_head } => {
                    step.phase(Phase::ReceiveAck)?;
                    repo.graph().update_ref(&remote.address, &sent)?;
                    Ok(Some(accepted_head))
                }
                SyncMessage::ErrorReply { code, .. } if code == UNKNOWN_VERSION && !from_root => Ok(None),
                other => Err(unexpected(other)),
            }
        })
    }

    /// Pulls the remote's head into the local graph, merging if needed. The
    /// snapshot is not touched.
    pub fn fetch(&mut self) -> Result<VersionId> {
        let remote = self.remote()?;
        let repo = &self.repo;
        repo.run_step(StepKind::Fetch, None, |step| {
            let from = {
                let g = repo.graph();
                known_base(&g, g.get_ref(&remote.address))
            };
            let msg = SyncMessage::FetchRequest {
                requester_id: repo.name().to_string(),
                from_version: Some(from),
            };
            match step.send_request(&remote.address, msg, remote.link.as_ref())? {
                SyncMessage::FetchResponse {
                    base_version,
                    diff,
                    new_head,
                } => {
                    let report = repo.receive(step, &base_version, &new_head, diff, &remote.address)?;
                    Ok(report.merged_version)
                }
                other => Err(unexpected(other)),
            }
        })
    }

    /// Fetch followed by checkout.
    pub fn pull(&mut self) -> Result<VersionId> {
        self.fetch()?;
        self.checkout()
    }
}

fn unexpected(msg: SyncMessage) -> Error {
    match msg {
        SyncMessage::ErrorReply { code, detail } => Error::Peer { code, detail },
        other => Error::Protocol(format!("unexpected {}", other.kind())),
    }
}
