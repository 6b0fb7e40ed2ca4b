//! How the controller reaches nodes: peer forwarding and rollback.

use std::sync::Arc;
use std::time::Duration;

use got_core::{Error, GraphExport, LocalNet, Result, SyncMessage, VersionId};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::RollbackRequest;

pub trait NodeTransport: Send + Sync {
    /// Delivers a sync request to the node at `address` and returns its reply.
    fn exchange(&self, address: &str, msg: &SyncMessage) -> Result<SyncMessage>;
    /// Rolls the node back and returns its history afterwards.
    fn rollback(&self, address: &str, version: &VersionId) -> Result<GraphExport>;
}

/// `host:port` or a full URL to a base URL without trailing slash.
pub fn base_url(address: &str) -> String {
    let a = address.trim_end_matches('/');
    if a.starts_with("http://") || a.starts_with("https://") {
        a.to_string()
    } else {
        format!("http://{a}")
    }
}

/// Blocking JSON over HTTP. Must not be called from async context.
#[derive(Clone)]
pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new() -> HttpTransport {
        let client = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(5))
            // requests may park at a paused controller indefinitely
            .timeout(None)
            .build()
            .expect("http client");
        HttpTransport { client }
    }

    pub fn post<B: Serialize, T: DeserializeOwned>(&self, url: &str, body: &B) -> Result<T> {
        let resp = self
            .client
            .post(url)
            .json(body)
            .send()
            .map_err(|e| Error::Network(format!("{url}: {e}")))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Network(format!("{url}: {status} {text}")));
        }
        resp.json().map_err(|e| Error::Decode(format!("{url}: {e}")))
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new()
    }
}

impl NodeTransport for HttpTransport {
    fn exchange(&self, address: &str, msg: &SyncMessage) -> Result<SyncMessage> {
        self.post(&format!("{}/sync", base_url(address)), msg)
    }

    fn rollback(&self, address: &str, version: &VersionId) -> Result<GraphExport> {
        let req = RollbackRequest {
            version: version.clone(),
        };
        self.post(&format!("{}/debug/rollback", base_url(address)), &req)
    }
}

/// Nodes living in this process.
pub struct LocalTransport(pub Arc<LocalNet>);

impl LocalTransport {
    fn repo(&self, address: &str) -> Result<Arc<got_core::Repository>> {
        self.0
            .get(address)
            .ok_or_else(|| Error::Network(format!("no node at {address}")))
    }
}

impl NodeTransport for LocalTransport {
    fn exchange(&self, address: &str, msg: &SyncMessage) -> Result<SyncMessage> {
        Ok(self.repo(address)?.serve(msg.clone()))
    }

    fn rollback(&self, address: &str, version: &VersionId) -> Result<GraphExport> {
        let repo = self.repo(address)?;
        repo.rollback(version)?;
        Ok(repo.export())
    }
}
