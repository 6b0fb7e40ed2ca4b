//! Shared objects under version control.
//!
//! Every node keeps a [`Dataframe`](dataframe::Dataframe): a snapshot where the
//! application stages local writes, and a [`VersionGraph`](graph::VersionGraph)
//! holding the published history. Nodes exchange history through delta-encoded
//! push and fetch messages ([`sync`]) and reconcile concurrent histories with
//! three-way merge functions. In debug mode every history primitive is split
//! into phases that an external controller grants one at a time ([`debug`]).

pub mod conflict;
pub mod dataframe;
pub mod debug;
pub mod error;
pub mod graph;
pub mod repo;
pub mod schema;
pub mod state;
pub mod sync;
pub mod value;

pub use conflict::{detect_conflicts, Conflict, ConflictReport};
pub use dataframe::{Dataframe, ObjectHandle, Snapshot};
pub use debug::{DebugEnvelope, Gate, GateAction, GateReply, Phase, Registration, StepKind};
pub use error::{Error, Result};
pub use graph::{GraphExport, MergeInput, MergeReport, PreferTheirs, Resolver, VersionGraph, VersionId};
pub use repo::Repository;
pub use schema::{ObjectState, Registry, TypeSchema};
pub use state::{apply_diff, compose_diffs, diff_states, Diff, ObjectDelta, ObjectKey, State};
pub use sync::{LocalNet, PeerLink, SyncMessage};
pub use value::{Value, ValueKind};
