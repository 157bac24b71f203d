//! Loopback HTTP API for approvals, session history, the live event stream,
//! and a read-only view of the active policy.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::sync::Arc;

use agentwall_core::approval::{ApprovalDecision, ApprovalError, DecidedVia};
use agentwall_core::audit::{list_sessions, read_events, verify_chain, ChainStatus};
use agentwall_core::frames::StreamFrame;
use agentwall_core::pipeline::Gatekeeper;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, oneshot};
use tokio::task::JoinHandle;

use crate::token;

pub const DEFAULT_PORT: u16 = 48620;

#[derive(Clone)]
struct ApiState {
    gk: Arc<Gatekeeper>,
    token: Arc<str>,
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("cannot bind control API on 127.0.0.1:{port}: {source}")]
    Bind { port: u16, source: io::Error },
}

/// A running server. Dropping it leaves the server running; call `shutdown`.
#[derive(Debug)]
pub struct ControlServer {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl ControlServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        let _ = self.task.await;
    }
}

/// Binds 127.0.0.1:`port` (0 picks a free port) and serves in the background.
pub async fn serve(
    gk: Arc<Gatekeeper>,
    port: u16,
    token: String,
) -> Result<ControlServer, ControlError> {
    let listener = tokio::net::TcpListener::bind((Ipv4Addr::LOCALHOST, port))
        .await
        .map_err(|source| ControlError::Bind { port, source })?;
    let addr = listener
        .local_addr()
        .map_err(|source| ControlError::Bind { port, source })?;
    let app = router(gk, token);
    let (stop, stopped) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    Ok(ControlServer {
        addr,
        stop: Some(stop),
        task,
    })
}

pub fn router(gk: Arc<Gatekeeper>, token: String) -> Router {
    let state = ApiState {
        gk,
        token: token.into(),
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/approvals/pending", get(pending))
        .route("/v1/approvals/{id}/decision", post(decide))
        .route("/v1/sessions", get(sessions))
        .route("/v1/sessions/{id}/events", get(session_events))
        .route("/v1/events/stream", get(event_stream))
        .route("/v1/policy", get(policy))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

fn error(status: StatusCode, code: &str, message: impl Into<String>) -> Response {
    (
        status,
        Json(json!({ "error": code, "message": message.into() })),
    )
        .into_response()
}

/// `Authorization: Bearer <token>`, or `?token=` for clients such as
/// browser event streams that cannot set headers.
async fn require_token(State(state): State<ApiState>, req: Request, next: Next) -> Response {
    let from_header = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let from_query = req.uri().query().and_then(|q| {
        q.split('&')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == "token")
            .map(|(_, v)| v)
    });
    match from_header.or(from_query) {
        Some(t) if token::matches(&state.token, t) => next.run(req).await,
        _ => error(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or invalid bearer token",
        ),
    }
}

async fn health(State(s): State<ApiState>) -> Json<Value> {
    let policy = s.gk.policy().current();
    Json(json!({
        "status": "ok",
        "session_id": s.gk.session_id(),
        "policy_version": policy.content_hash,
        "pending_approvals": s.gk.broker().list_pending().len(),
    }))
}

async fn pending(State(s): State<ApiState>) -> Json<Value> {
    Json(json!(s.gk.broker().list_pending()))
}

#[derive(Debug, Deserialize)]
struct DecisionBody {
    decision: String,
}

async fn decide(
    State(s): State<ApiState>,
    Path(id): Path<String>,
    body: Result<Json<DecisionBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.body_text()),
    };
    let Some(decision) = ApprovalDecision::parse(&body.decision) else {
        return error(
            StatusCode::BAD_REQUEST,
            "bad_request",
            "decision must be \"approve\" or \"reject\"",
        );
    };
    match s
        .gk
        .broker()
        .decide(&id, decision, DecidedVia::Api, s.gk.clock().now())
    {
        Ok(done) => Json(json!(done)).into_response(),
        Err(e @ ApprovalError::NotFound(_)) => {
            error(StatusCode::NOT_FOUND, "not_found", e.to_string())
        }
        Err(e @ ApprovalError::Conflict { state, .. }) => (
            StatusCode::CONFLICT,
            Json(json!({ "error": "conflict", "message": e.to_string(), "state": state })),
        )
            .into_response(),
    }
}

fn sessions_dir(s: &ApiState) -> PathBuf {
    s.gk.audit().dir().to_path_buf()
}

async fn sessions(State(s): State<ApiState>) -> Response {
    match list_sessions(&sessions_dir(&s)) {
        Ok(list) => Json(json!(list)).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()),
    }
}

#[derive(Serialize)]
struct FileChain {
    file: PathBuf,
    chain: ChainStatus,
}

async fn session_events(State(s): State<ApiState>, Path(id): Path<String>) -> Response {
    let listed = match list_sessions(&sessions_dir(&s)) {
        Ok(l) => l,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string()),
    };
    let mut files: Vec<PathBuf> = listed
        .into_iter()
        .filter(|x| x.session_id == id)
        .map(|x| x.file)
        .collect();
    files.dedup();
    if files.is_empty() {
        return error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no session {id}"),
        );
    }
    let mut events = Vec::new();
    let mut chains = Vec::new();
    for file in files {
        match (read_events(&file), verify_chain(&file)) {
            (Ok(read), Ok(chain)) => {
                events.extend(read.events.into_iter().filter(|e| e.session_id == id));
                chains.push(FileChain { file, chain });
            }
            (Err(e), _) | (_, Err(e)) => {
                return error(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
            }
        }
    }
    Json(json!({ "session_id": id, "events": events, "files": chains })).into_response()
}

async fn policy(State(s): State<ApiState>) -> Json<Value> {
    Json(s.gk.policy().current().to_json())
}

async fn event_stream(
    State(s): State<ApiState>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let (backlog, rx) = s.gk.bus().subscribe();
    Sse::new(frame_stream(backlog.into(), rx)).keep_alive(KeepAlive::default())
}

/// Backlog first, then live frames. A receiver that lagged past the channel
/// buffer ends the stream so a slow consumer cannot hold anything up.
fn frame_stream(
    backlog: VecDeque<StreamFrame>,
    rx: broadcast::Receiver<StreamFrame>,
) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold((backlog, rx), |(mut backlog, mut rx)| async move {
        let frame = match backlog.pop_front() {
            Some(f) => f,
            None => match rx.recv().await {
                Ok(f) => f,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event stream consumer too slow; disconnecting");
                    return None;
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            },
        };
        let data = serde_json::to_string(&frame).expect("frames serialize");
        Some((Ok(Event::default().data(data)), (backlog, rx)))
    })
}
