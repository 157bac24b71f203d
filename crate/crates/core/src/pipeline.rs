//! The per-session decision pipeline.
//!
//! For every tool call: check the policy file for changes, map the call to
//! an action, charge the tool's rate window, evaluate the policy, and for ASK
//! wait on a human. Each step that decides writes its audit event (and the
//! matching stream frame) before the caller is told what to do.

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;
use serde_json::{json, Map, Value};
use tokio::task::JoinHandle;

use crate::action::{map_tool_call, ActionProposal, SessionContext, ToolCall};
use crate::approval::{spawn_expiry_sweeper, ApprovalBroker, ApprovalRequest, ApprovalState};
use crate::audit::{AuditEvent, AuditLog, AuditRecord, DecidedBy};
use crate::clock::Clock;
use crate::frames::{FrameBus, FrameKind};
use crate::policy::{evaluate, PolicyStore, Verdict};
use crate::rate_limit::{RateDecision, RateLimiter};

/// What happened to one tool call.
#[derive(Debug, Clone, Serialize)]
pub struct DecisionRecord {
    pub action_id: String,
    pub tool: String,
    /// Absent when the call could not be mapped.
    pub action: Option<ActionProposal>,
    /// The verdict of the deciding mechanism (ASK for escalations).
    pub verdict: Verdict,
    pub decided_by: DecidedBy,
    pub rule_id: Option<String>,
    /// Policy evaluation time; absent when evaluation did not run.
    pub latency_ms: Option<f64>,
    pub policy_version: String,
    pub reload_detected: bool,
    /// Set for ASK verdicts once the request is resolved.
    pub approval: Option<ApprovalRequest>,
    pub forwarded: bool,
}

#[derive(Debug, Clone)]
pub enum Dispatch {
    Forward(DecisionRecord),
    Block {
        record: DecisionRecord,
        message: String,
    },
}

impl Dispatch {
    pub fn record(&self) -> &DecisionRecord {
        match self {
            Dispatch::Forward(r) => r,
            Dispatch::Block { record, .. } => record,
        }
    }

    pub fn is_forward(&self) -> bool {
        matches!(self, Dispatch::Forward(_))
    }
}

pub struct Gatekeeper {
    policy: Arc<PolicyStore>,
    limiter: RateLimiter,
    broker: Arc<ApprovalBroker>,
    audit: Arc<AuditLog>,
    bus: Arc<FrameBus>,
    clock: Arc<dyn Clock>,
    session: RwLock<SessionContext>,
    // keeps log order and frame order identical
    record_lock: Mutex<()>,
    next_action: AtomicU64,
}

impl std::fmt::Debug for Gatekeeper {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gatekeeper")
            .field("session", &self.session.read().session_id)
            .finish()
    }
}

impl Gatekeeper {
    pub fn new(
        policy: Arc<PolicyStore>,
        audit: Arc<AuditLog>,
        clock: Arc<dyn Clock>,
        session: SessionContext,
    ) -> Self {
        let limiter = RateLimiter::new(&policy.current().rate_limits);
        Self {
            policy,
            limiter,
            broker: Arc::new(ApprovalBroker::new()),
            audit,
            bus: Arc::new(FrameBus::new()),
            clock,
            session: RwLock::new(session),
            record_lock: Mutex::new(()),
            next_action: AtomicU64::new(1),
        }
    }

    pub fn broker(&self) -> &Arc<ApprovalBroker> {
        &self.broker
    }

    pub fn bus(&self) -> &Arc<FrameBus> {
        &self.bus
    }

    pub fn policy(&self) -> &Arc<PolicyStore> {
        &self.policy
    }

    pub fn audit(&self) -> &Arc<AuditLog> {
        &self.audit
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn session(&self) -> SessionContext {
        self.session.read().clone()
    }

    pub fn session_id(&self) -> String {
        self.session.read().session_id.clone()
    }

    /// Records the client name reported during the MCP handshake.
    pub fn set_runtime(&self, runtime: impl Into<String>) {
        self.session.write().runtime = runtime.into();
    }

    /// Times out overdue approvals every `interval`.
    pub fn spawn_sweeper(&self, interval: Duration) -> JoinHandle<()> {
        spawn_expiry_sweeper(
            Arc::clone(&self.broker),
            Arc::clone(&self.clock),
            interval,
            |_| {},
        )
    }

    pub async fn handle_call(&self, tool: &str, arguments: Map<String, Value>) -> Dispatch {
        let now = self.clock.now();
        let action_id = format!("a{}", self.next_action.fetch_add(1, Ordering::Relaxed));

        let reload = self.policy.reload_if_changed();
        let doc = reload.doc;
        if reload.reload_detected {
            self.limiter.sync_config(&doc.rate_limits);
            self.bus.publish(
                FrameKind::PolicyReloaded,
                json!({
                    "policy_version": doc.content_hash,
                    "rules": doc.rules.len(),
                    "path": self.policy.path().display().to_string(),
                }),
            );
        }
        if let Some(msg) = reload.warning {
            let target = self.policy.path().display().to_string();
            if let Err(e) = self.record_warning(tool, &target, &msg, &doc.content_hash) {
                return self.audit_failure(action_id, tool, &doc.content_hash, e);
            }
        }
        let reload_detected = reload.reload_detected;
        let version = doc.content_hash.clone();

        let session = self.session();
        let call = ToolCall {
            id: action_id.clone(),
            tool: tool.to_string(),
            arguments,
            received_at: now,
        };
        let action = match map_tool_call(&call, &doc.tool_mappings, &session) {
            Ok(a) => a,
            Err(e) => {
                let record = DecisionRecord {
                    action_id: action_id.clone(),
                    tool: tool.to_string(),
                    action: None,
                    verdict: Verdict::Deny,
                    decided_by: DecidedBy::Policy,
                    rule_id: None,
                    latency_ms: None,
                    policy_version: version.clone(),
                    reload_detected,
                    approval: None,
                    forwarded: false,
                };
                let note = format!("unmappable: {e}");
                let ev = AuditRecord {
                    ts: now,
                    session_id: session.session_id.clone(),
                    runtime: session.runtime.clone(),
                    tool: tool.to_string(),
                    action_id: Some(action_id.clone()),
                    action_type: None,
                    target: String::new(),
                    decision: Some(Verdict::Deny),
                    decided_by: DecidedBy::Policy,
                    rule_id: None,
                    latency_ms: 0.0,
                    policy_version: version.clone(),
                    reload_detected,
                    note: Some(note.clone()),
                };
                if let Err(e) = self.record(ev) {
                    return self.audit_failure(action_id, tool, &version, e);
                }
                return Dispatch::Block {
                    message: format!("agentwall: DENY (unmappable) for `{tool}`: {e}"),
                    record,
                };
            }
        };

        if self.limiter.check_and_consume(tool, now.timestamp_millis()) == RateDecision::Limited {
            let (max, window) = self.limiter.limit_for(tool).unwrap_or_default();
            let note = format!("rate limit: {max} calls per {window} s");
            let record = DecisionRecord {
                action_id: action_id.clone(),
                tool: tool.to_string(),
                action: Some(action.clone()),
                verdict: Verdict::Deny,
                decided_by: DecidedBy::RateLimit,
                rule_id: None,
                latency_ms: None,
                policy_version: version.clone(),
                reload_detected,
                approval: None,
                forwarded: false,
            };
            let ev = self.action_record(
                &action,
                now,
                Verdict::Deny,
                DecidedBy::RateLimit,
                None,
                0.0,
                &version,
                reload_detected,
                Some(note.clone()),
            );
            if let Err(e) = self.record(ev) {
                return self.audit_failure(action_id, tool, &version, e);
            }
            return Dispatch::Block {
                message: format!("agentwall: DENY by rate-limit for `{tool}` ({note})"),
                record,
            };
        }

        let eval = evaluate(&doc, &action);
        let latency_ms = eval.latency_ms();
        let mut record = DecisionRecord {
            action_id: action_id.clone(),
            tool: tool.to_string(),
            action: Some(action.clone()),
            verdict: eval.verdict,
            decided_by: DecidedBy::Policy,
            rule_id: eval.rule_id.clone(),
            latency_ms: Some(latency_ms),
            policy_version: version.clone(),
            reload_detected,
            approval: None,
            forwarded: false,
        };
        let ev = self.action_record(
            &action,
            now,
            eval.verdict,
            DecidedBy::Policy,
            eval.rule_id.clone(),
            latency_ms,
            &version,
            reload_detected,
            None,
        );
        if let Err(e) = self.record(ev) {
            return self.audit_failure(action_id, tool, &version, e);
        }
        let rule = eval.rule_id.as_deref().unwrap_or("default");

        match eval.verdict {
            Verdict::Allow => {
                record.forwarded = true;
                Dispatch::Forward(record)
            }
            Verdict::Deny => Dispatch::Block {
                message: format!(
                    "agentwall: DENY by rule {rule} for {} `{}`",
                    action.action_type,
                    action.target_summary()
                ),
                record,
            },
            Verdict::Ask => {
                let ticket = self.broker.submit(
                    action.clone(),
                    doc.defaults.approval_timeout_seconds,
                    self.clock.now(),
                );
                self.bus
                    .publish(FrameKind::ApprovalPending, json!(ticket.request));
                let done = ticket.wait().await;
                let approved = done.state == ApprovalState::Approved;
                let note = match (done.state, done.decided_via) {
                    (ApprovalState::TimedOut, _) => "approval-timeout".to_string(),
                    (state, Some(via)) => format!(
                        "{} via {}",
                        state.as_str().to_ascii_lowercase(),
                        via.as_str()
                    ),
                    (state, None) => state.as_str().to_ascii_lowercase(),
                };
                let final_verdict = if approved {
                    Verdict::Allow
                } else {
                    Verdict::Deny
                };
                let ev = self.action_record(
                    &action,
                    done.decided_at.unwrap_or_else(|| self.clock.now()),
                    final_verdict,
                    DecidedBy::Approval,
                    eval.rule_id.clone(),
                    0.0,
                    &version,
                    false,
                    Some(format!("{note} (request {})", done.id)),
                );
                self.bus.publish(FrameKind::ApprovalResolved, json!(done));
                record.approval = Some(done.clone());
                if let Err(e) = self.record(ev) {
                    return self.audit_failure(action_id, tool, &version, e);
                }
                if approved {
                    record.forwarded = true;
                    Dispatch::Forward(record)
                } else {
                    let reason = if done.state == ApprovalState::TimedOut {
                        "approval-timeout".to_string()
                    } else {
                        format!("{} by user", done.state)
                    };
                    Dispatch::Block {
                        message: format!(
                            "agentwall: ASK by rule {rule} for {} `{}` ended {reason}",
                            action.action_type,
                            action.target_summary()
                        ),
                        record,
                    }
                }
            }
        }
    }

    /// Appends a `warning` audit event.
    pub fn record_warning(
        &self,
        tool: &str,
        target: &str,
        message: &str,
        policy_version: &str,
    ) -> std::io::Result<AuditEvent> {
        let session = self.session();
        self.record(AuditRecord {
            ts: self.clock.now(),
            session_id: session.session_id,
            runtime: session.runtime,
            tool: tool.to_string(),
            action_id: None,
            action_type: None,
            target: target.to_string(),
            decision: None,
            decided_by: DecidedBy::Warning,
            rule_id: None,
            latency_ms: 0.0,
            policy_version: policy_version.to_string(),
            reload_detected: false,
            note: Some(message.to_string()),
        })
    }

    /// Warning event against the currently active policy.
    pub fn warn(&self, tool: &str, target: &str, message: &str) -> std::io::Result<AuditEvent> {
        let version = self.policy.current().content_hash.clone();
        self.record_warning(tool, target, message, &version)
    }

    fn record(&self, rec: AuditRecord) -> std::io::Result<AuditEvent> {
        let _order = self.record_lock.lock();
        let event = self.audit.append(rec)?;
        let kind = if event.decided_by == DecidedBy::Warning {
            FrameKind::Warning
        } else {
            FrameKind::Decision
        };
        self.bus.publish(kind, json!(event));
        Ok(event)
    }

    #[allow(clippy::too_many_arguments)]
    fn action_record(
        &self,
        action: &ActionProposal,
        ts: DateTime<Utc>,
        decision: Verdict,
        decided_by: DecidedBy,
        rule_id: Option<String>,
        latency_ms: f64,
        version: &str,
        reload_detected: bool,
        note: Option<String>,
    ) -> AuditRecord {
        AuditRecord {
            ts,
            session_id: action.session_id.clone(),
            runtime: action.runtime.clone(),
            tool: action.tool.clone(),
            action_id: Some(action.id.clone()),
            action_type: Some(action.action_type),
            target: action.target_summary().to_string(),
            decision: Some(decision),
            decided_by,
            rule_id,
            latency_ms,
            policy_version: version.to_string(),
            reload_detected,
            note,
        }
    }

    fn audit_failure(
        &self,
        action_id: String,
        tool: &str,
        version: &str,
        err: std::io::Error,
    ) -> Dispatch {
        tracing::error!(%err, tool, "audit append failed; blocking call");
        Dispatch::Block {
            message: format!("agentwall: DENY, audit log unavailable ({err})"),
            record: DecisionRecord {
                action_id,
                tool: tool.to_string(),
                action: None,
                verdict: Verdict::Deny,
                decided_by: DecidedBy::Policy,
                rule_id: None,
                latency_ms: None,
                policy_version: version.to_string(),
                reload_detected: false,
                approval: None,
                forwarded: false,
            },
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error("audit log directory {dir} is not writable: {source}")]
    Audit {
        dir: String,
        #[source]
        source: std::io::Error,
    },
}

/// Loads the policy file and opens the session directory. Either failing
/// means the proxy must not start.
pub fn open_gatekeeper(
    policy_path: &Path,
    env: crate::policy::PolicyEnv,
    session_dir: &Path,
    clock: Arc<dyn Clock>,
    session: SessionContext,
) -> Result<Gatekeeper, StartupError> {
    let store = PolicyStore::open(policy_path, env)?;
    let audit = AuditLog::open(session_dir).map_err(|source| StartupError::Audit {
        dir: session_dir.display().to_string(),
        source,
    })?;
    Ok(Gatekeeper::new(
        Arc::new(store),
        Arc::new(audit),
        clock,
        session,
    ))
}
