//! Relays one client <-> downstream stdio session.
//!
//! Lines from the client are classified; everything except `tools/call`
//! goes downstream as the original bytes. Each `tools/call` runs through the
//! gatekeeper on its own task so an ASK waiting on a human does not hold up
//! other traffic. Responses travel back in whatever order they complete.

use std::collections::HashMap;
use std::io;
use std::sync::Arc;
use std::time::Duration;

use agentwall_core::pipeline::{Dispatch, Gatekeeper};
use parking_lot::Mutex;
use serde_json::Value;
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::sync::mpsc;
use tokio::task::{JoinHandle, JoinSet};

use crate::jsonrpc::{self, Message};

/// Longest accepted line; larger messages are answered with a parse error.
pub const MAX_LINE_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct SessionOptions {
    /// How the downstream server is named in warning events.
    pub downstream_label: String,
    /// After the client hangs up, how long to wait for the downstream to
    /// close its output before giving up on it.
    pub shutdown_grace: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            downstream_label: "downstream".into(),
            shutdown_grace: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    /// The client closed its side; the downstream was told to stop.
    ClientClosed,
    /// The downstream closed its output while the client was still there.
    DownstreamClosed,
}

#[derive(Debug)]
struct Pending {
    id: Value,
    tool_call: bool,
    forwarded: bool,
}

#[derive(Debug, Default)]
struct Shared {
    inflight: HashMap<String, Pending>,
    downstream_gone: bool,
}

type Lines = mpsc::Receiver<Vec<u8>>;

/// Reads newline-terminated lines, dropping the terminator and any `\r`.
fn spawn_line_reader<R>(reader: R) -> (Lines, JoinHandle<io::Result<()>>)
where
    R: AsyncRead + Unpin + Send + 'static,
{
    let (tx, rx) = mpsc::channel(64);
    let handle = tokio::spawn(async move {
        let mut reader = BufReader::new(reader);
        loop {
            let mut buf = Vec::new();
            let n = (&mut reader)
                .take(MAX_LINE_BYTES as u64 + 1)
                .read_until(b'\n', &mut buf)
                .await?;
            if n == 0 {
                return Ok(());
            }
            if buf.last() == Some(&b'\n') {
                buf.pop();
            } else if buf.len() > MAX_LINE_BYTES {
                // skip the rest of the oversized line
                let mut sink = Vec::new();
                reader.read_until(b'\n', &mut sink).await?;
            }
            if buf.last() == Some(&b'\r') {
                buf.pop();
            }
            if tx.send(buf).await.is_err() {
                return Ok(());
            }
        }
    });
    (rx, handle)
}

/// Writes queued lines in order, flushing after each.
fn spawn_line_writer<W>(mut writer: W) -> (mpsc::UnboundedSender<Vec<u8>>, JoinHandle<()>)
where
    W: AsyncWrite + Unpin + Send + 'static,
{
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let handle = tokio::spawn(async move {
        while let Some(line) = rx.recv().await {
            if writer.write_all(&line).await.is_err() || writer.flush().await.is_err() {
                break;
            }
        }
        let _ = writer.shutdown().await;
    });
    (tx, handle)
}

fn with_newline(mut line: Vec<u8>) -> Vec<u8> {
    line.push(b'\n');
    line
}

struct Relay {
    gk: Arc<Gatekeeper>,
    shared: Arc<Mutex<Shared>>,
    to_client: mpsc::UnboundedSender<Vec<u8>>,
    to_downstream: Option<mpsc::UnboundedSender<Vec<u8>>>,
    calls: JoinSet<()>,
}

impl Relay {
    fn warn(&self, target: &str, message: &str) {
        if let Err(e) = self.gk.warn("-", target, message) {
            tracing::error!(%e, "could not record warning event");
        }
    }

    fn reply(&self, bytes: Vec<u8>) {
        let _ = self.to_client.send(bytes);
    }

    fn forward(&self, line: Vec<u8>) -> bool {
        match &self.to_downstream {
            Some(tx) => tx.send(with_newline(line)).is_ok(),
            None => false,
        }
    }

    fn on_client_line(&mut self, line: Vec<u8>) {
        if line.iter().all(u8::is_ascii_whitespace) {
            return;
        }
        let msg = match jsonrpc::classify(&line) {
            Ok(m) => m,
            Err(bad) => {
                self.reply(jsonrpc::error_response(
                    &Value::Null,
                    bad.code(),
                    &bad.to_string(),
                ));
                self.warn("client", &format!("malformed message from client: {bad}"));
                return;
            }
        };
        match msg {
            Message::Request { id, method, params } if method == "tools/call" => {
                self.on_tool_call(line, id, params)
            }
            Message::Request { id, method, params } => {
                if method == "initialize" {
                    if let Some(rt) = jsonrpc::client_runtime(params.as_ref()) {
                        self.gk.set_runtime(rt);
                    }
                }
                let key = jsonrpc::id_key(&id);
                {
                    let mut s = self.shared.lock();
                    if s.downstream_gone {
                        drop(s);
                        self.reply(jsonrpc::error_response(
                            &id,
                            jsonrpc::INTERNAL_ERROR,
                            "downstream server has exited",
                        ));
                        return;
                    }
                    s.inflight.insert(
                        key,
                        Pending {
                            id,
                            tool_call: false,
                            forwarded: true,
                        },
                    );
                }
                self.forward(line);
            }
            Message::Notification { method } if method == "tools/call" => {
                // nothing to answer, and forwarding it would skip the policy
                self.warn("client", "dropped tools/call sent as a notification");
            }
            Message::Notification { .. } | Message::Response { .. } => {
                self.forward(line);
            }
        }
    }

    fn on_tool_call(&mut self, line: Vec<u8>, id: Value, params: Option<Value>) {
        let (tool, arguments) = match jsonrpc::tool_call_params(params.as_ref()) {
            Ok(p) => p,
            Err(why) => {
                self.reply(jsonrpc::error_response(&id, jsonrpc::INVALID_PARAMS, &why));
                self.warn("client", &format!("rejected tools/call: {why}"));
                return;
            }
        };
        let key = jsonrpc::id_key(&id);
        {
            let mut s = self.shared.lock();
            if s.inflight.contains_key(&key) {
                drop(s);
                self.reply(jsonrpc::error_response(
                    &id,
                    jsonrpc::INVALID_REQUEST,
                    "request id is already in flight",
                ));
                self.warn("client", &format!("duplicate request id {key}"));
                return;
            }
            s.inflight.insert(
                key.clone(),
                Pending {
                    id: id.clone(),
                    tool_call: true,
                    forwarded: false,
                },
            );
        }

        let gk = Arc::clone(&self.gk);
        let shared = Arc::clone(&self.shared);
        let to_client = self.to_client.clone();
        let to_downstream = self.to_downstream.clone();
        self.calls.spawn(async move {
            let dispatch = gk.handle_call(&tool, arguments).await;
            let mut s = shared.lock();
            let s = &mut *s;
            let Some(pending) = s.inflight.get_mut(&key) else {
                // already answered when the downstream went away
                return;
            };
            match dispatch {
                Dispatch::Forward(_) => {
                    let sent = !s.downstream_gone
                        && to_downstream
                            .as_ref()
                            .is_some_and(|tx| tx.send(with_newline(line)).is_ok());
                    if sent {
                        pending.forwarded = true;
                    } else {
                        s.inflight.remove(&key);
                        let _ = to_client.send(jsonrpc::tool_error(
                            &id,
                            "agentwall: downstream server exited before the call was forwarded",
                        ));
                    }
                }
                Dispatch::Block { message, .. } => {
                    s.inflight.remove(&key);
                    let _ = to_client.send(jsonrpc::tool_error(&id, &message));
                }
            }
        });
    }

    fn on_downstream_line(&self, line: Vec<u8>) {
        match jsonrpc::classify(&line) {
            Ok(Message::Response { id }) => {
                self.shared.lock().inflight.remove(&jsonrpc::id_key(&id));
            }
            Ok(_) => {}
            Err(bad) => self.warn(
                "downstream",
                &format!("malformed message from downstream: {bad}"),
            ),
        }
        self.reply(with_newline(line));
    }

    /// Answers everything still outstanding. Returns how many.
    fn fail_outstanding(&mut self) -> usize {
        let drained: Vec<Pending> = {
            let mut s = self.shared.lock();
            s.downstream_gone = true;
            s.inflight.drain().map(|(_, p)| p).collect()
        };
        self.calls.abort_all();
        for p in &drained {
            let bytes = if p.tool_call {
                jsonrpc::tool_error(&p.id, "agentwall: downstream server exited")
            } else {
                jsonrpc::error_response(
                    &p.id,
                    jsonrpc::INTERNAL_ERROR,
                    "downstream server has exited",
                )
            };
            self.reply(bytes);
        }
        drained.len()
    }
}

/// Runs until the downstream closes its output, or until the client closes
/// and the downstream follows within the grace period.
pub async fn run_session<CR, CW, DR, DW>(
    gk: Arc<Gatekeeper>,
    client_in: CR,
    client_out: CW,
    downstream_out: DR,
    downstream_in: DW,
    opts: SessionOptions,
) -> SessionEnd
where
    CR: AsyncRead + Unpin + Send + 'static,
    CW: AsyncWrite + Unpin + Send + 'static,
    DR: AsyncRead + Unpin + Send + 'static,
    DW: AsyncWrite + Unpin + Send + 'static,
{
    let (mut client_rx, client_reader) = spawn_line_reader(client_in);
    let (mut down_rx, down_reader) = spawn_line_reader(downstream_out);
    let (to_client, client_writer) = spawn_line_writer(client_out);
    let (to_downstream, down_writer) = spawn_line_writer(downstream_in);

    let mut relay = Relay {
        gk,
        shared: Arc::new(Mutex::new(Shared::default())),
        to_client,
        to_downstream: Some(to_downstream),
        calls: JoinSet::new(),
    };
    let mut client_open = true;
    let grace = tokio::time::sleep(Duration::MAX / 4);
    tokio::pin!(grace);

    let end = loop {
        tokio::select! {
            line = client_rx.recv(), if client_open => match line {
                Some(line) => relay.on_client_line(line),
                None => {
                    client_open = false;
                    // calls already read still get decided and forwarded; each
                    // task holds its own sender, so the downstream's stdin
                    // closes once the last one finishes
                    relay.to_downstream = None;
                    grace.as_mut().reset(tokio::time::Instant::now() + opts.shutdown_grace);
                }
            },
            line = down_rx.recv() => match line {
                Some(line) => relay.on_downstream_line(line),
                None => {
                    let answered = relay.fail_outstanding();
                    if client_open {
                        relay.warn(
                            &opts.downstream_label,
                            &format!("downstream exited mid-session; {answered} pending request(s) answered with errors"),
                        );
                        break SessionEnd::DownstreamClosed;
                    }
                    break SessionEnd::ClientClosed;
                }
            },
            Some(_) = relay.calls.join_next(), if !relay.calls.is_empty() => {}
            _ = &mut grace, if !client_open => {
                let undecided = relay.calls.len();
                if undecided > 0 {
                    relay.warn(
                        &opts.downstream_label,
                        &format!("client closed; {undecided} tool call(s) still undecided were dropped"),
                    );
                }
                break SessionEnd::ClientClosed;
            }
        }
    };

    relay.calls.abort_all();
    relay.to_downstream = None;
    client_reader.abort();
    down_reader.abort();
    // let queued responses reach the client
    let Relay { to_client, .. } = relay;
    drop(to_client);
    let _ = client_writer.await;
    down_writer.abort();
    end
}
