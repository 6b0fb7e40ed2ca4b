//! HTTP and WebSocket front of the controller.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State as Ext};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use got_core::{DebugEnvelope, Registration, VersionId};
use serde::Deserialize;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, oneshot};

use crate::api::*;
use crate::controller::{ControlError, Controller, Submitted};

type Ctl = Arc<Controller>;

impl ControlError {
    pub fn status(&self) -> StatusCode {
        match self {
            ControlError::UnknownNode(_) | ControlError::UnknownStep(_) | ControlError::UnknownBreakpoint(_) => {
                StatusCode::NOT_FOUND
            }
            ControlError::DuplicateNode(_)
            | ControlError::NoPendingPhase(_)
            | ControlError::NotPaused
            | ControlError::StepActive(_)
            | ControlError::OutOfBounds(_) => StatusCode::CONFLICT,
            ControlError::Parse(_) | ControlError::History(_) | ControlError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            ControlError::Transport(_) => StatusCode::BAD_GATEWAY,
            ControlError::Rejected { status, .. } => {
                StatusCode::from_u16(*status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
            }
        }
    }
}

impl IntoResponse for ControlError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.to_string() });
        if let ControlError::Parse(p) = &self {
            body["offset"] = json!(p.offset);
        }
        (self.status(), Json(body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ControlError>;

pub fn router(ctl: Ctl) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/register", post(register))
        .route("/step", post(step))
        .route("/topology", get(topology))
        .route("/status", get(status))
        .route("/breakpoints", get(list_breakpoints).post(add_breakpoint))
        .route("/breakpoints/{id}", delete(remove_breakpoint))
        .route("/control", post(control))
        .route("/nodes/{name}/history", get(history))
        .route("/nodes/{name}/steps", get(steps))
        .route("/nodes/{name}/state", get(state))
        .route("/nodes/{name}/reorder", post(reorder))
        .route("/nodes/{name}/rollback", post(rollback))
        .route("/nodes/{name}/finished", post(finished))
        .route("/events", get(events))
        .with_state(ctl)
}

async fn index() -> Html<&'static str> {
    Html("<!doctype html><title>GoTcha</title><p>GoTcha controller. The browser UI is not bundled; use the JSON API.</p>")
}

async fn register(Ext(ctl): Ext<Ctl>, Json(reg): Json<Registration>) -> Reply<serde_json::Value> {
    ctl.register(reg)?;
    Ok(Json(json!({})))
}

async fn step(Ext(ctl): Ext<Ctl>, Json(env): Json<DebugEnvelope>) -> Response {
    match ctl.submit(env) {
        Ok(Submitted::Ready(reply)) => Json(reply).into_response(),
        // held until granted, however long that takes
        Ok(Submitted::Wait(rx)) => match rx.await {
            Ok(reply) => Json(reply).into_response(),
            Err(_) => (StatusCode::SERVICE_UNAVAILABLE, "step dropped").into_response(),
        },
        Err(e) => e.into_response(),
    }
}

async fn finished(Ext(ctl): Ext<Ctl>, Path(name): Path<String>) -> Reply<serde_json::Value> {
    ctl.finished(&name)?;
    Ok(Json(json!({})))
}

async fn topology(Ext(ctl): Ext<Ctl>) -> Json<Topology> {
    Json(ctl.topology())
}

async fn status(Ext(ctl): Ext<Ctl>) -> Json<Status> {
    Json(ctl.status())
}

async fn list_breakpoints(Ext(ctl): Ext<Ctl>) -> Json<Vec<BreakpointView>> {
    Json(ctl.breakpoints())
}

async fn add_breakpoint(Ext(ctl): Ext<Ctl>, Json(req): Json<BreakpointRequest>) -> Reply<BreakpointView> {
    Ok(Json(ctl.add_breakpoint(&req.predicate)?))
}

async fn remove_breakpoint(Ext(ctl): Ext<Ctl>, Path(id): Path<u64>) -> Reply<serde_json::Value> {
    ctl.remove_breakpoint(id)?;
    Ok(Json(json!({})))
}

async fn control(Ext(ctl): Ext<Ctl>, Json(req): Json<ControlRequest>) -> Reply<serde_json::Value> {
    let granted = ctl.control(req)?;
    Ok(Json(json!({ "granted": granted })))
}

async fn history(Ext(ctl): Ext<Ctl>, Path(name): Path<String>) -> Reply<got_core::GraphExport> {
    Ok(Json(ctl.history(&name)?))
}

async fn steps(Ext(ctl): Ext<Ctl>, Path(name): Path<String>) -> Reply<StepsView> {
    Ok(Json(ctl.steps(&name)?))
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<VersionId>,
}

async fn state(
    Ext(ctl): Ext<Ctl>,
    Path(name): Path<String>,
    Query(q): Query<VersionQuery>,
) -> Reply<got_core::State> {
    Ok(Json(ctl.state(&name, q.version.as_ref())?))
}

async fn reorder(
    Ext(ctl): Ext<Ctl>,
    Path(name): Path<String>,
    Json(req): Json<ReorderRequest>,
) -> Reply<serde_json::Value> {
    ctl.reorder(&name, req)?;
    Ok(Json(json!({})))
}

async fn rollback(
    Ext(ctl): Ext<Ctl>,
    Path(name): Path<String>,
    Json(req): Json<RollbackRequest>,
) -> Reply<serde_json::Value> {
    // the transport blocks
    tokio::task::spawn_blocking(move || ctl.rollback(&name, &req.version))
        .await
        .map_err(|e| ControlError::Transport(e.to_string()))??;
    Ok(Json(json!({})))
}

async fn events(Ext(ctl): Ext<Ctl>, ws: WebSocketUpgrade) -> Response {
    let rx = ctl.subscribe();
    ws.on_upgrade(move |socket| pump(socket, rx))
}

async fn pump(mut socket: WebSocket, mut rx: broadcast::Receiver<Event>) {
    loop {
        let event = match rx.recv().await {
            Ok(e) => e,
            Err(broadcast::error::RecvError::Lagged(n)) => {
                log::warn!("event subscriber lagged by {n}");
                continue;
            }
            Err(broadcast::error::RecvError::Closed) => return,
        };
        let text = serde_json::to_string(&event).expect("events serialize");
        if socket.send(Message::Text(text.into())).await.is_err() {
            return;
        }
    }
}

pub async fn serve(listener: TcpListener, ctl: Ctl) -> std::io::Result<()> {
    axum::serve(listener, router(ctl)).await
}

/// An axum app served from a background thread with its own runtime, so
/// blocking callers can host it.
pub struct Background {
    pub addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Background {
    pub fn start(listen: &str, app: Router) -> std::io::Result<Background> {
        let std_listener = std::net::TcpListener::bind(listen)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name(format!("http-{addr}")).spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .expect("tokio runtime");
            rt.block_on(async move {
                let listener = TcpListener::from_std(std_listener).expect("listener");
                tokio::select! {
                    r = axum::serve(listener, app) => {
                        if let Err(e) = r {
                            log::error!("http server on {addr}: {e}");
                        }
                    }
                    _ = stopped => {}
                }
            });
            // parked long-polls would otherwise keep the runtime alive
            rt.shutdown_background();
        })?;
        Ok(Background {
            addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
