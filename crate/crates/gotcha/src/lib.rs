//! GoTcha: a controller that intercepts and steps GoT nodes.

pub mod api;
pub mod breakpoint;
pub mod client;
pub mod controller;
pub mod server;
pub mod transport;

pub use api::*;
pub use breakpoint::{ParseError, Predicate};
pub use controller::{ControlError, Controller, Submitted};
pub use transport::{HttpTransport, LocalTransport, NodeTransport};
pub use client::{ControlApi, HttpControl, HttpGate};
pub use server::Background;
