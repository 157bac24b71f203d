use std::sync::Arc;
use std::time::Duration;

use agentwall_core::action::SessionContext;
use agentwall_core::clock::ManualClock;
use agentwall_core::frames::{FrameKind, StreamFrame};
use agentwall_core::pipeline::{open_gatekeeper, Dispatch, Gatekeeper};
use agentwall_core::policy::{PolicyEnv, DEFAULT_POLICY_YAML};
use agentwall_proxy::control::{serve, ControlServer};
use futures::StreamExt;
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::task::JoinHandle;

const TOKEN: &str = "test-token-123";

struct Api {
    _dir: tempfile::TempDir,
    gk: Arc<Gatekeeper>,
    server: ControlServer,
    http: reqwest::Client,
}

impl Api {
    async fn start() -> Api {
        let dir = tempfile::tempdir().unwrap();
        let policy = dir.path().join("policy.yaml");
        std::fs::write(&policy, DEFAULT_POLICY_YAML).unwrap();
        let gk = Arc::new(
            open_gatekeeper(
                &policy,
                PolicyEnv::new("/home/dev"),
                &dir.path().join("sessions"),
                Arc::new(ManualClock::new("2026-03-24T09:00:00Z".parse().unwrap())),
                SessionContext {
                    session_id: "api-sess".into(),
                    runtime: "test".into(),
                    home: "/home/dev".into(),
                    workspace_root: "/home/dev/proj".into(),
                },
            )
            .unwrap(),
        );
        let server = serve(Arc::clone(&gk), 0, TOKEN.into()).await.unwrap();
        Api {
            _dir: dir,
            gk,
            server,
            http: reqwest::Client::new(),
        }
    }

    fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.server.addr())
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self
            .http
            .get(self.url(path))
            .bearer_auth(TOKEN)
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    async fn decide(&self, id: &str, decision: &str) -> (StatusCode, Value) {
        let r = self
            .http
            .post(self.url(&format!("/v1/approvals/{id}/decision")))
            .bearer_auth(TOKEN)
            .json(&json!({ "decision": decision }))
            .send()
            .await
            .unwrap();
        (r.status(), r.json().await.unwrap())
    }

    /// Starts an ASK call and waits until it is pending.
    async fn ask(&self) -> (String, JoinHandle<Dispatch>) {
        let gk = Arc::clone(&self.gk);
        let call = tokio::spawn(async move {
            let args = json!({"command": "sudo apt-get install x"});
            gk.handle_call("exec", args.as_object().unwrap().clone())
                .await
        });
        loop {
            if let Some(p) = self.gk.broker().list_pending().first() {
                return (p.id.clone(), call);
            }
            tokio::time::sleep(Duration::from_millis(2)).await;
        }
    }
}

#[tokio::test]
async fn binds_loopback_and_requires_token() {
    let api = Api::start().await;
    assert!(api.server.addr().ip().is_loopback());
    let r = api.http.get(api.url("/v1/health")).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = api
        .http
        .get(api.url("/v1/health"))
        .bearer_auth("wrong")
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::UNAUTHORIZED);
    let r = api
        .http
        .get(api.url(&format!("/v1/health?token={TOKEN}")))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);

    let (status, body) = api.get("/v1/health").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["session_id"], "api-sess");
}

#[tokio::test]
async fn port_in_use_is_a_startup_error() {
    let api = Api::start().await;
    let taken = api.server.addr().port();
    assert!(serve(Arc::clone(&api.gk), taken, TOKEN.into())
        .await
        .is_err());
}

#[tokio::test]
async fn approval_round_trip_and_conflicts() {
    let api = Api::start().await;
    let (id, call) = api.ask().await;

    let (status, body) = api.get("/v1/approvals/pending").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body.as_array().unwrap().len(), 1);
    assert_eq!(body[0]["id"], id.as_str());
    assert_eq!(body[0]["state"], "PENDING");
    assert_eq!(body[0]["action"]["command"], "sudo apt-get install x");

    let (status, _) = api.decide(&id, "maybe").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = api.decide(&id, "approve").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["state"], "APPROVED");
    assert_eq!(body["decided_via"], "API");
    assert!(call.await.unwrap().is_forward());

    let (status, body) = api.decide(&id, "reject").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["state"], "APPROVED");
    let (status, _) = api.decide("nope1234", "approve").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn racing_decisions_resolve_exactly_once() {
    let api = Api::start().await;
    for _ in 0..10 {
        let (id, call) = api.ask().await;
        let (a, b) = tokio::join!(api.decide(&id, "approve"), api.decide(&id, "reject"));
        let mut codes = [a.0, b.0];
        codes.sort();
        assert_eq!(codes, [StatusCode::OK, StatusCode::CONFLICT]);
        call.await.unwrap();
    }
}

#[tokio::test]
async fn sessions_events_and_policy() {
    let api = Api::start().await;
    let args = json!({"path": "~/.ssh/id_rsa"});
    api.gk
        .handle_call("read_file", args.as_object().unwrap().clone())
        .await;
    api.gk
        .handle_call(
            "read_file",
            json!({"path": "a"}).as_object().unwrap().clone(),
        )
        .await;

    let (status, list) = api.get("/v1/sessions").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list[0]["session_id"], "api-sess");
    assert_eq!(list[0]["events"], 2);

    let (status, body) = api.get("/v1/sessions/api-sess/events").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["events"].as_array().unwrap().len(), 2);
    assert_eq!(body["events"][0]["rule_id"], "deny-ssh-keys");
    assert_eq!(body["files"][0]["chain"]["status"], "ok");

    let (status, _) = api.get("/v1/sessions/nobody/events").await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, policy) = api.get("/v1/policy").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(
        policy["content_hash"],
        json!(api.gk.policy().current().content_hash)
    );
    let r = api
        .http
        .post(api.url("/v1/policy"))
        .bearer_auth(TOKEN)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::METHOD_NOT_ALLOWED);
}

async fn next_frame(
    body: &mut (impl futures::Stream<Item = reqwest::Result<bytes::Bytes>> + Unpin),
    buf: &mut String,
) -> StreamFrame {
    loop {
        if let Some(end) = buf.find("\n\n") {
            let event: String = buf.drain(..end + 2).collect();
            if let Some(data) = event.lines().find_map(|l| l.strip_prefix("data: ")) {
                return serde_json::from_str(data).unwrap();
            }
            continue;
        }
        let chunk = tokio::time::timeout(Duration::from_secs(5), body.next())
            .await
            .expect("frame in time")
            .unwrap()
            .unwrap();
        buf.push_str(std::str::from_utf8(&chunk).unwrap());
    }
}

#[tokio::test]
async fn stream_replays_then_follows() {
    let api = Api::start().await;
    api.gk
        .handle_call(
            "read_file",
            json!({"path": "a"}).as_object().unwrap().clone(),
        )
        .await;

    let r = api
        .http
        .get(api.url("/v1/events/stream"))
        .bearer_auth(TOKEN)
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    assert!(r.headers()["content-type"]
        .to_str()
        .unwrap()
        .starts_with("text/event-stream"));
    let mut body = r.bytes_stream();
    let mut buf = String::new();

    let replayed = next_frame(&mut body, &mut buf).await;
    assert_eq!(replayed.kind, FrameKind::Decision);
    assert_eq!(replayed.payload["decision"], "ALLOW");

    let (id, call) = api.ask().await;
    let decision = next_frame(&mut body, &mut buf).await;
    assert_eq!(decision.payload["decision"], "ASK");
    let pending = next_frame(&mut body, &mut buf).await;
    assert_eq!(pending.kind, FrameKind::ApprovalPending);
    assert_eq!(pending.payload["id"], id.as_str());

    api.decide(&id, "reject").await;
    call.await.unwrap();
    let resolved = next_frame(&mut body, &mut buf).await;
    assert_eq!(resolved.kind, FrameKind::ApprovalResolved);
    let outcome = next_frame(&mut body, &mut buf).await;
    assert_eq!(outcome.payload["decided_by"], "approval");
    assert_eq!(outcome.payload["decision"], "DENY");
    assert!(outcome.id > replayed.id);
}
