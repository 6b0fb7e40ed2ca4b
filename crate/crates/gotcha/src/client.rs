//! Blocking clients: the node-side gate and the control API.

use std::time::{Duration, Instant};

use got_core::{DebugEnvelope, Error, Gate, GateReply, GraphExport, Registration, State, VersionId};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::*;
use crate::controller::{ControlError, Controller};
use crate::transport::{base_url, HttpTransport};

/// Gate talking to a controller over HTTP.
pub struct HttpGate {
    base: String,
    http: HttpTransport,
}

impl HttpGate {
    pub fn new(controller: &str) -> HttpGate {
        HttpGate {
            base: base_url(controller),
            http: HttpTransport::new(),
        }
    }
}

impl Gate for HttpGate {
    fn register(&self, registration: &Registration) -> got_core::Result<()> {
        let _: serde_json::Value = self
            .http
            .post(&format!("{}/register", self.base), registration)
            .map_err(|e| Error::Gate(e.to_string()))?;
        Ok(())
    }

    fn submit(&self, envelope: DebugEnvelope) -> got_core::Result<GateReply> {
        self.http
            .post(&format!("{}/step", self.base), &envelope)
            .map_err(|e| Error::Gate(e.to_string()))
    }

    fn finished(&self, node: &str) -> got_core::Result<()> {
        let _: serde_json::Value = self
            .http
            .post(&format!("{}/nodes/{node}/finished", self.base), &serde_json::json!({}))
            .map_err(|e| Error::Gate(e.to_string()))?;
        Ok(())
    }
}

pub type ApiResult<T> = Result<T, ControlError>;

/// What a user (or a scripted driver) can do with a controller.
pub trait ControlApi: Send + Sync {
    fn status(&self) -> ApiResult<Status>;
    fn topology(&self) -> ApiResult<Topology>;
    fn history(&self, node: &str) -> ApiResult<GraphExport>;
    fn steps(&self, node: &str) -> ApiResult<StepsView>;
    fn state(&self, node: &str, version: Option<&VersionId>) -> ApiResult<State>;
    fn control(&self, req: ControlRequest) -> ApiResult<usize>;
    fn reorder(&self, node: &str, req: ReorderRequest) -> ApiResult<()>;
    fn rollback(&self, node: &str, version: &VersionId) -> ApiResult<()>;
    fn add_breakpoint(&self, predicate: &str) -> ApiResult<BreakpointView>;
    fn remove_breakpoint(&self, id: u64) -> ApiResult<()>;
    fn breakpoints(&self) -> ApiResult<Vec<BreakpointView>>;

    /// Waits until no application flow is running. False on timeout.
    fn wait_quiescent(&self, timeout: Duration) -> ApiResult<bool> {
        let deadline = Instant::now() + timeout;
        loop {
            if self.status()?.quiescent() {
                return Ok(true);
            }
            if Instant::now() >= deadline {
                return Ok(false);
            }
            std::thread::sleep(Duration::from_millis(1));
        }
    }

    fn step_node(&self, node: &str) -> ApiResult<usize> {
        self.control(ControlRequest {
            action: ControlAction::StepNode,
            node: Some(node.to_string()),
        })
    }

    fn step_all(&self) -> ApiResult<usize> {
        self.control(ControlRequest {
            action: ControlAction::StepAll,
            node: None,
        })
    }

    fn play(&self) -> ApiResult<usize> {
        self.control(ControlRequest {
            action: ControlAction::Play,
            node: None,
        })
    }

    fn pause(&self) -> ApiResult<usize> {
        self.control(ControlRequest {
            action: ControlAction::Pause,
            node: None,
        })
    }
}

impl ControlApi for Controller {
    fn status(&self) -> ApiResult<Status> {
        Ok(Controller::status(self))
    }

    fn topology(&self) -> ApiResult<Topology> {
        Ok(Controller::topology(self))
    }

    fn history(&self, node: &str) -> ApiResult<GraphExport> {
        Controller::history(self, node)
    }

    fn steps(&self, node: &str) -> ApiResult<StepsView> {
        Controller::steps(self, node)
    }

    fn state(&self, node: &str, version: Option<&VersionId>) -> ApiResult<State> {
        Controller::state(self, node, version)
    }

    fn control(&self, req: ControlRequest) -> ApiResult<usize> {
        Controller::control(self, req)
    }

    fn reorder(&self, node: &str, req: ReorderRequest) -> ApiResult<()> {
        Controller::reorder(self, node, req)
    }

    fn rollback(&self, node: &str, version: &VersionId) -> ApiResult<()> {
        Controller::rollback(self, node, version)
    }

    fn add_breakpoint(&self, predicate: &str) -> ApiResult<BreakpointView> {
        Controller::add_breakpoint(self, predicate)
    }

    fn remove_breakpoint(&self, id: u64) -> ApiResult<()> {
        Controller::remove_breakpoint(self, id)
    }

    fn breakpoints(&self) -> ApiResult<Vec<BreakpointView>> {
        Ok(Controller::breakpoints(self))
    }

    fn wait_quiescent(&self, timeout: Duration) -> ApiResult<bool> {
        Ok(Controller::wait_quiescent(self, timeout))
    }
}

/// The control API of a controller reached over HTTP.
pub struct HttpControl {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpControl {
    pub fn new(controller: &str) -> HttpControl {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .expect("http client");
        HttpControl {
            base: base_url(controller),
            client,
        }
    }

    fn finish<T: DeserializeOwned>(&self, resp: reqwest::Result<reqwest::blocking::Response>) -> ApiResult<T> {
        let resp = resp.map_err(|e| ControlError::Transport(e.to_string()))?;
        let status = resp.status();
        if status.is_success() {
            return resp.json().map_err(|e| ControlError::Transport(e.to_string()));
        }
        let body: serde_json::Value = resp.json().unwrap_or_default();
        Err(ControlError::Rejected {
            status: status.as_u16(),
            message: body["error"].as_str().unwrap_or("").to_string(),
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> ApiResult<T> {
        self.finish(self.client.get(format!("{}{path}", self.base)).send())
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> ApiResult<T> {
        self.finish(self.client.post(format!("{}{path}", self.base)).json(body).send())
    }
}

impl ControlApi for HttpControl {
    fn status(&self) -> ApiResult<Status> {
        self.get("/status")
    }

    fn topology(&self) -> ApiResult<Topology> {
        self.get("/topology")
    }

    fn history(&self, node: &str) -> ApiResult<GraphExport> {
        self.get(&format!("/nodes/{node}/history"))
    }

    fn steps(&self, node: &str) -> ApiResult<StepsView> {
        self.get(&format!("/nodes/{node}/steps"))
    }

    fn state(&self, node: &str, version: Option<&VersionId>) -> ApiResult<State> {
        match version {
            Some(v) => self.get(&format!("/nodes/{node}/state?version={}", v.as_str())),
            None => self.get(&format!("/nodes/{node}/state")),
        }
    }

    fn control(&self, req: ControlRequest) -> ApiResult<usize> {
        let v: serde_json::Value = self.post("/control", &req)?;
        Ok(v["granted"].as_u64().unwrap_or(0) as usize)
    }

    fn reorder(&self, node: &str, req: ReorderRequest) -> ApiResult<()> {
        let _: serde_json::Value = self.post(&format!("/nodes/{node}/reorder"), &req)?;
        Ok(())
    }

    fn rollback(&self, node: &str, version: &VersionId) -> ApiResult<()> {
        let req = RollbackRequest {
            version: version.clone(),
        };
        let _: serde_json::Value = self.post(&format!("/nodes/{node}/rollback"), &req)?;
        Ok(())
    }

    fn add_breakpoint(&self, predicate: &str) -> ApiResult<BreakpointView> {
        self.post(
            "/breakpoints",
            &BreakpointRequest {
                predicate: predicate.to_string(),
            },
        )
    }

    fn remove_breakpoint(&self, id: u64) -> ApiResult<()> {
        let resp = self.client.delete(format!("{}/breakpoints/{id}", self.base)).send();
        let _: serde_json::Value = self.finish(resp)?;
        Ok(())
    }

    fn breakpoints(&self) -> ApiResult<Vec<BreakpointView>> {
        self.get("/breakpoints")
    }
}
