//! Core of the agentwall tool-call firewall.
//!
//! Tool calls are mapped to [`action::ActionProposal`]s, checked against a
//! per-tool [`rate_limit::RateLimiter`], evaluated by the
//! [`policy`] engine, escalated to the [`approval::ApprovalBroker`] when the
//! verdict is ASK, and recorded in the hash-chained [`audit`] log. The
//! [`pipeline::Gatekeeper`] runs those steps in order for one session.

pub mod action;
pub mod approval;
pub mod audit;
pub mod clock;
pub mod frames;
pub mod pipeline;
pub mod policy;
pub mod rate_limit;

pub use action::{ActionProposal, ActionType, SessionContext};
pub use pipeline::{DecisionRecord, Dispatch, Gatekeeper};
pub use policy::{PolicyDocument, PolicyEnv, Verdict};
