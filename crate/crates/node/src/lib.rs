//! Hosting a GoT node.
//!
//! A node owns one repository. Its application function runs on a single
//! flow against a [`Dataframe`]; peers reach the repository through the sync
//! server (`POST /sync`). In debug mode the node registers with a GoTcha
//! controller before the application starts, every primitive is gated there,
//! and the server also accepts `POST /debug/rollback`.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State as Ext;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use got_core::{
    Dataframe, Error, Gate, PeerLink, PreferTheirs, Registration, Registry, Repository, Resolver, Result,
    SyncMessage,
};
use gotcha::server::Background;
use gotcha::{HttpGate, HttpTransport, NodeTransport, RollbackRequest};

/// Environment variable naming the controller; set it to debug every node.
pub const GCN_ENV: &str = "GOTCHA_GCN";

pub struct NodeConfig {
    pub name: String,
    pub registry: Arc<Registry>,
    /// Address for the sync server. Debug mode always serves, on an
    /// ephemeral port when this is unset.
    pub listen: Option<String>,
    pub remote: Option<String>,
    pub resolver: Arc<dyn Resolver>,
    /// Controller address; falls back to `GOTCHA_GCN`.
    pub debug: Option<String>,
}

impl NodeConfig {
    pub fn new(name: &str, registry: Arc<Registry>) -> NodeConfig {
        NodeConfig {
            name: name.to_string(),
            registry,
            listen: None,
            remote: None,
            resolver: Arc::new(PreferTheirs),
            debug: None,
        }
    }

    pub fn listen(mut self, addr: &str) -> NodeConfig {
        self.listen = Some(addr.to_string());
        self
    }

    pub fn remote(mut self, addr: &str) -> NodeConfig {
        self.remote = Some(addr.to_string());
        self
    }

    pub fn resolver(mut self, resolver: Arc<dyn Resolver>) -> NodeConfig {
        self.resolver = resolver;
        self
    }

    pub fn debug(mut self, controller: Option<&str>) -> NodeConfig {
        self.debug = controller.map(String::from);
        self
    }

    fn controller(&self) -> Option<String> {
        self.debug
            .clone()
            .or_else(|| std::env::var(GCN_ENV).ok().filter(|s| !s.is_empty()))
    }
}

/// Peer link over HTTP.
pub struct HttpPeerLink {
    address: String,
    http: HttpTransport,
}

impl HttpPeerLink {
    pub fn new(address: &str) -> HttpPeerLink {
        HttpPeerLink {
            address: address.to_string(),
            http: HttpTransport::new(),
        }
    }
}

impl PeerLink for HttpPeerLink {
    fn exchange(&self, msg: &SyncMessage) -> Result<SyncMessage> {
        self.http.exchange(&self.address, msg)
    }
}

async fn sync(Ext(repo): Ext<Arc<Repository>>, Json(msg): Json<SyncMessage>) -> Response {
    match tokio::task::spawn_blocking(move || repo.serve(msg)).await {
        Ok(reply) => Json(reply).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn rollback(Ext(repo): Ext<Arc<Repository>>, Json(req): Json<RollbackRequest>) -> Response {
    let out = tokio::task::spawn_blocking(move || repo.rollback(&req.version).map(|_| repo.export())).await;
    match out {
        Ok(Ok(export)) => Json(export).into_response(),
        Ok(Err(e)) => (StatusCode::BAD_REQUEST, Json(serde_json::json!({ "error": e.to_string() }))).into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

pub fn router(repo: Arc<Repository>, debug: bool) -> Router {
    let mut app = Router::new().route("/sync", post(sync));
    if debug {
        app = app.route("/debug/rollback", post(rollback));
    }
    app.with_state(repo)
}

/// A launched node whose application has not run yet.
pub struct Node {
    repo: Arc<Repository>,
    remote: Option<String>,
    gate: Option<Arc<dyn Gate>>,
    server: Option<Background>,
}

impl Node {
    /// Builds the repository, starts the server and registers with the
    /// controller in debug mode.
    pub fn launch(cfg: NodeConfig) -> Result<Node> {
        let controller = cfg.controller();
        let gate: Option<Arc<dyn Gate>> = controller.as_deref().map(|c| Arc::new(HttpGate::new(c)) as Arc<dyn Gate>);
        let repo = Repository::new(&cfg.name, cfg.registry.clone(), cfg.resolver.clone(), gate.clone());
        let listen = cfg
            .listen
            .clone()
            .or_else(|| gate.as_ref().map(|_| "127.0.0.1:0".to_string()));
        let server = match &listen {
            Some(addr) => Some(
                Background::start(addr, router(repo.clone(), gate.is_some()))
                    .map_err(|e| Error::Network(format!("cannot serve on {addr}: {e}")))?,
            ),
            None => None,
        };
        if let Some(gate) = &gate {
            let address = server.as_ref().map(|s| s.addr.to_string()).unwrap_or_default();
            gate.register(&Registration {
                name: cfg.name.clone(),
                address,
                remote: cfg.remote.clone(),
                types: cfg.registry.names().map(String::from).collect(),
            })?;
            log::info!("{} registered with controller {}", cfg.name, controller.unwrap_or_default());
        }
        Ok(Node {
            repo,
            remote: cfg.remote,
            gate,
            server,
        })
    }

    pub fn address(&self) -> Option<SocketAddr> {
        self.server.as_ref().map(|s| s.addr)
    }

    pub fn repo(&self) -> &Arc<Repository> {
        &self.repo
    }

    /// Runs the application to completion, then stops serving.
    pub fn run<T>(self, app: impl FnOnce(&mut Dataframe) -> T) -> T {
        let mut df = Dataframe::new(self.repo.clone());
        if let Some(remote) = &self.remote {
            df = df.with_remote(remote, Arc::new(HttpPeerLink::new(remote)));
        }
        let out = app(&mut df);
        if let Some(gate) = &self.gate {
            if let Err(e) = gate.finished(self.repo.name()) {
                log::warn!("{}: could not report completion: {e}", self.repo.name());
            }
        }
        drop(self.server);
        out
    }
}

/// Runs a node on the calling thread.
pub fn start<T>(cfg: NodeConfig, app: impl FnOnce(&mut Dataframe) -> T) -> Result<T> {
    Ok(Node::launch(cfg)?.run(app))
}

pub struct NodeHandle<T> {
    address: Option<SocketAddr>,
    thread: JoinHandle<T>,
}

impl<T> NodeHandle<T> {
    pub fn address(&self) -> Option<SocketAddr> {
        self.address
    }

    /// Waits for the application; a panic in it is reported as an error.
    pub fn join(self) -> Result<T> {
        self.thread
            .join()
            .map_err(|_| Error::Protocol("node application panicked".into()))
    }
}

/// Launches the node now and runs its application on a new thread.
pub fn start_async<T, F>(cfg: NodeConfig, app: F) -> Result<NodeHandle<T>>
where
    T: Send + 'static,
    F: FnOnce(&mut Dataframe) -> T + Send + 'static,
{
    let name = cfg.name.clone();
    let node = Node::launch(cfg)?;
    let address = node.address();
    let thread = std::thread::Builder::new()
        .name(name)
        .spawn(move || node.run(app))
        .map_err(|e| Error::Protocol(format!("cannot spawn node thread: {e}")))?;
    Ok(NodeHandle { address, thread })
}
