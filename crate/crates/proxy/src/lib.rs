//! Gateway-mode interposition for MCP tool servers over stdio.
//!
//! [`session::run_session`] sits between a client and a downstream server and
//! sends every `tools/call` through an [`agentwall_core::Gatekeeper`]. The
//! [`control`] module exposes approvals and history over loopback HTTP.

pub mod control;
pub mod jsonrpc;
pub mod mock;
pub mod run;
pub mod session;
pub mod token;
pub mod tty;

pub use run::{new_session_id, run_proxy, ProxyConfig, ProxyError};
pub use session::{run_session, SessionEnd, SessionOptions};
