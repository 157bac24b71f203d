//! Human approval of ASK actions.
//!
//! The broker is a registry of [`ApprovalRequest`]s shared by the proxy
//! pipeline (which submits and waits), the TTY prompt and control API (which
//! decide), and an expiry sweeper. Every request leaves `PENDING` exactly
//! once; later attempts get a conflict error naming the state it ended in.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::Duration as StdDuration;

use chrono::{DateTime, Duration, Utc};
use parking_lot::Mutex;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::action::ActionProposal;
use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ApprovalState {
    Pending,
    Approved,
    Rejected,
    TimedOut,
}

impl ApprovalState {
    pub fn is_terminal(self) -> bool {
        self != ApprovalState::Pending
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ApprovalState::Pending => "PENDING",
            ApprovalState::Approved => "APPROVED",
            ApprovalState::Rejected => "REJECTED",
            ApprovalState::TimedOut => "TIMED_OUT",
        }
    }
}

impl fmt::Display for ApprovalState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DecidedVia {
    Tty,
    Api,
}

impl DecidedVia {
    pub fn as_str(self) -> &'static str {
        match self {
            DecidedVia::Tty => "TTY",
            DecidedVia::Api => "API",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApprovalDecision {
    Approve,
    Reject,
}

impl ApprovalDecision {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "approve" | "approved" | "a" | "allow" => Some(ApprovalDecision::Approve),
            "reject" | "rejected" | "r" | "deny" => Some(ApprovalDecision::Reject),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub id: String,
    pub action: ActionProposal,
    pub created_at: DateTime<Utc>,
    pub timeout_seconds: u64,
    pub state: ApprovalState,
    pub decided_at: Option<DateTime<Utc>>,
    pub decided_via: Option<DecidedVia>,
}

impl ApprovalRequest {
    pub fn expires_at(&self) -> DateTime<Utc> {
        self.created_at + Duration::seconds(self.timeout_seconds as i64)
    }

    /// `ASK EXECUTE exec: sudo apt-get install x` style summary.
    pub fn summary(&self) -> String {
        format!(
            "{} {}: {}",
            self.action.action_type,
            self.action.tool,
            self.action.target_summary()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApprovalError {
    #[error("no approval request with id `{0}`")]
    NotFound(String),
    #[error("approval request `{id}` was already resolved: {state}")]
    Conflict { id: String, state: ApprovalState },
}

/// Handle held by the submitter; resolves once the request leaves PENDING.
#[derive(Debug)]
pub struct ApprovalTicket {
    pub request: ApprovalRequest,
    rx: oneshot::Receiver<ApprovalRequest>,
}

impl ApprovalTicket {
    /// Waits for the terminal request. If the broker goes away first the
    /// request counts as timed out.
    pub async fn wait(self) -> ApprovalRequest {
        let fallback = self.request.clone();
        match self.rx.await {
            Ok(done) => done,
            Err(_) => ApprovalRequest {
                state: ApprovalState::TimedOut,
                ..fallback
            },
        }
    }
}

struct Slot {
    request: ApprovalRequest,
    waiter: Option<oneshot::Sender<ApprovalRequest>>,
}

#[derive(Default)]
pub struct ApprovalBroker {
    slots: Mutex<HashMap<String, Slot>>,
}

impl fmt::Debug for ApprovalBroker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApprovalBroker")
            .field("requests", &self.slots.lock().len())
            .finish()
    }
}

const ID_ALPHABET: &[u8] = b"abcdefghjkmnpqrstuvwxyz23456789";
const ID_LEN: usize = 8;

impl ApprovalBroker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a PENDING request. A zero timeout times out immediately.
    pub fn submit(
        &self,
        action: ActionProposal,
        timeout_seconds: u64,
        now: DateTime<Utc>,
    ) -> ApprovalTicket {
        let (tx, rx) = oneshot::channel();
        let mut slots = self.slots.lock();
        let id = loop {
            let candidate = random_id();
            if !slots.contains_key(&candidate) {
                break candidate;
            }
        };
        let mut request = ApprovalRequest {
            id: id.clone(),
            action,
            created_at: now,
            timeout_seconds,
            state: ApprovalState::Pending,
            decided_at: None,
            decided_via: None,
        };
        let mut waiter = Some(tx);
        if timeout_seconds == 0 {
            request.state = ApprovalState::TimedOut;
            request.decided_at = Some(now);
            if let Some(tx) = waiter.take() {
                let _ = tx.send(request.clone());
            }
        }
        slots.insert(
            id,
            Slot {
                request: request.clone(),
                waiter,
            },
        );
        ApprovalTicket { request, rx }
    }

    pub fn decide(
        &self,
        id: &str,
        decision: ApprovalDecision,
        via: DecidedVia,
        now: DateTime<Utc>,
    ) -> Result<ApprovalRequest, ApprovalError> {
        let mut slots = self.slots.lock();
        let slot = slots
            .get_mut(id)
            .ok_or_else(|| ApprovalError::NotFound(id.to_string()))?;
        if slot.request.state.is_terminal() {
            return Err(ApprovalError::Conflict {
                id: id.to_string(),
                state: slot.request.state,
            });
        }
        slot.request.state = match decision {
            ApprovalDecision::Approve => ApprovalState::Approved,
            ApprovalDecision::Reject => ApprovalState::Rejected,
        };
        slot.request.decided_at = Some(now);
        slot.request.decided_via = Some(via);
        Ok(resolve(slot))
    }

    /// Times out every PENDING request whose deadline is at or before `now`.
    pub fn expire(&self, now: DateTime<Utc>) -> Vec<ApprovalRequest> {
        let mut slots = self.slots.lock();
        let mut expired: Vec<ApprovalRequest> = slots
            .values_mut()
            .filter(|s| s.request.state == ApprovalState::Pending && now >= s.request.expires_at())
            .map(|slot| {
                slot.request.state = ApprovalState::TimedOut;
                slot.request.decided_at = Some(now);
                resolve(slot)
            })
            .collect();
        expired.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        expired
    }

    pub fn list_pending(&self) -> Vec<ApprovalRequest> {
        let mut pending: Vec<ApprovalRequest> = self
            .slots
            .lock()
            .values()
            .filter(|s| s.request.state == ApprovalState::Pending)
            .map(|s| s.request.clone())
            .collect();
        pending.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        pending
    }

    pub fn get(&self, id: &str) -> Option<ApprovalRequest> {
        self.slots.lock().get(id).map(|s| s.request.clone())
    }
}

fn resolve(slot: &mut Slot) -> ApprovalRequest {
    let done = slot.request.clone();
    if let Some(tx) = slot.waiter.take() {
        let _ = tx.send(done.clone());
    }
    done
}

fn random_id() -> String {
    let mut rng = rand::thread_rng();
    (0..ID_LEN)
        .map(|_| ID_ALPHABET[rng.gen_range(0..ID_ALPHABET.len())] as char)
        .collect()
}

/// Periodically expires overdue requests; `on_expired` sees each batch.
pub fn spawn_expiry_sweeper<F>(
    broker: Arc<ApprovalBroker>,
    clock: Arc<dyn Clock>,
    interval: StdDuration,
    mut on_expired: F,
) -> tokio::task::JoinHandle<()>
where
    F: FnMut(Vec<ApprovalRequest>) + Send + 'static,
{
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(interval);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tick.tick().await;
            let expired = broker.expire(clock.now());
            if !expired.is_empty() {
                on_expired(expired);
            }
        }
    })
}
