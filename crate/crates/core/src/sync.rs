//! Messages exchanged between nodes and the transports that carry them.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::VersionId;
use crate::repo::Repository;
use crate::state::Diff;

/// Error code for a push whose start version the receiver does not hold.
pub const UNKNOWN_VERSION: &str = "unknown-version";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum SyncMessage {
    FetchRequest {
        requester_id: String,
        /// Last version of the responder the requester holds.
        #[serde(default)]
        from_version: Option<VersionId>,
    },
    FetchResponse {
        /// Version the diff starts from.
        base_version: VersionId,
        diff: Diff,
        new_head: VersionId,
    },
    PushRequest {
        sender_id: String,
        start_version: VersionId,
        end_version: VersionId,
        diff: Diff,
    },
    PushAck {
        accepted_head: VersionId,
    },
    ErrorReply {
        code: String,
        detail: String,
    },
}

impl SyncMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            SyncMessage::FetchRequest { .. } => "FetchRequest",
            SyncMessage::FetchResponse { .. } => "FetchResponse",
            SyncMessage::PushRequest { .. } => "PushRequest",
            SyncMessage::PushAck { .. } => "PushAck",
            SyncMessage::ErrorReply { .. } => "ErrorReply",
        }
    }

    pub fn error(code: &str, detail: impl Into<String>) -> SyncMessage {
        SyncMessage::ErrorReply {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn from_error(err: &Error) -> SyncMessage {
        let code = match err {
            Error::UnknownVersion(_) => UNKNOWN_VERSION,
            Error::NonConforming { .. } | Error::UnknownType(_) | Error::InvalidDelta { .. } => "invalid",
            Error::Resolver(_) => "merge-failed",
            Error::Gate(_) => "gate",
            _ => "internal",
        };
        SyncMessage::error(code, err.to_string())
    }
}

/// A request/response channel to one peer.
pub trait PeerLink: Send + Sync {
    fn exchange(&self, msg: &SyncMessage) -> Result<SyncMessage>;
}

/// In-process network: repositories registered by address.
#[derive(Default)]
pub struct LocalNet {
    nodes: RwLock<HashMap<String, Arc<Repository>>>,
}

impl LocalNet {
    pub fn new() -> Arc<LocalNet> {
        Arc::new(LocalNet::default())
    }

    pub fn attach(&self, address: &str, repo: Arc<Repository>) {
        self.nodes.write().expect("net lock").insert(address.to_string(), repo);
    }

    pub fn get(&self, address: &str) -> Option<Arc<Repository>> {
        self.nodes.read().expect("net lock").get(address).cloned()
    }

    pub fn link(self: &Arc<Self>, address: &str) -> Arc<dyn PeerLink> {
        Arc::new(LocalLink {
            net: self.clone(),
            address: address.to_string(),
        })
    }
}

struct LocalLink {
    net: Arc<LocalNet>,
    address: String,
}

impl PeerLink for LocalLink {
    fn exchange(&self, msg: &SyncMessage) -> Result<SyncMessage> {
        let repo = self
            .net
            .get(&self.address)
            .ok_or_else(|| Error::Network(format!("no node at {}", self.address)))?;
        Ok(repo.serve(msg.clone()))
    }
}
