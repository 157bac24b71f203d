//! A stand-in MCP tool server that acknowledges every call without doing
//! anything, optionally recording what it was asked to do.

use std::path::PathBuf;

use serde_json::{json, Value};
use tokio::io::{AsyncBufReadExt, AsyncRead, AsyncWrite, AsyncWriteExt, BufReader};

use crate::jsonrpc::{self, Message};

const PROTOCOL_VERSION: &str = "2025-06-18";

fn tool(name: &str, arg: &str) -> Value {
    json!({
        "name": name,
        "description": format!("mock {name}"),
        "inputSchema": {
            "type": "object",
            "properties": { arg: { "type": "string" } },
            "required": [arg],
        },
    })
}

fn tool_list() -> Value {
    json!([
        tool("read_file", "path"),
        tool("write_file", "path"),
        tool("edit_file", "path"),
        tool("delete_file", "path"),
        tool("exec", "command"),
        tool("run_command", "command"),
        tool("bash", "command"),
        tool("query", "sql"),
        tool("sql", "sql"),
        tool("fetch", "url"),
        tool("http_request", "url"),
    ])
}

/// Serves until `input` ends. Every received `tools/call` is appended to
/// `record` as `{"id", "name", "arguments"}` before it is acknowledged.
/// Returns the number of calls received.
pub async fn serve_mock<R, W>(
    input: R,
    mut output: W,
    record: Option<PathBuf>,
) -> std::io::Result<u64>
where
    R: AsyncRead + Unpin,
    W: AsyncWrite + Unpin,
{
    let mut record = match record {
        Some(path) => Some(
            tokio::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .await?,
        ),
        None => None,
    };
    let mut lines = BufReader::new(input).lines();
    let mut calls = 0;
    while let Some(line) = lines.next_line().await? {
        if line.trim().is_empty() {
            continue;
        }
        let Ok(Message::Request { id, method, params }) = jsonrpc::classify(line.as_bytes()) else {
            continue;
        };
        let result = match method.as_str() {
            "initialize" => json!({
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": { "tools": {} },
                "serverInfo": { "name": "agentwall-mock", "version": env!("CARGO_PKG_VERSION") },
            }),
            "ping" => json!({}),
            "tools/list" => json!({ "tools": tool_list() }),
            "tools/call" => {
                calls += 1;
                let params = params.unwrap_or(Value::Null);
                if let Some(f) = record.as_mut() {
                    let mut entry = serde_json::to_vec(&json!({
                        "id": id,
                        "name": params.get("name"),
                        "arguments": params.get("arguments"),
                    }))?;
                    entry.push(b'\n');
                    f.write_all(&entry).await?;
                    f.sync_data().await?;
                }
                json!({ "content": [{ "type": "text", "text": "ok" }], "isError": false })
            }
            other => {
                let reply =
                    jsonrpc::error_response(&id, -32601, &format!("method not found: {other}"));
                output.write_all(&reply).await?;
                output.flush().await?;
                continue;
            }
        };
        let mut reply =
            serde_json::to_vec(&json!({ "jsonrpc": "2.0", "id": id, "result": result }))?;
        reply.push(b'\n');
        output.write_all(&reply).await?;
        output.flush().await?;
    }
    Ok(calls)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn acknowledges_and_records() {
        let dir = tempfile::tempdir().unwrap();
        let rec = dir.path().join("calls.jsonl");
        let input = concat!(
            r#"{"jsonrpc":"2.0","id":1,"method":"initialize","params":{}}"#,
            "\n",
            r#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#,
            "\n",
            r#"{"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"exec","arguments":{"command":"ls"}}}"#,
            "\n",
            r#"{"jsonrpc":"2.0","id":3,"method":"nope"}"#,
            "\n",
        );
        let mut out = Vec::new();
        let n = serve_mock(input.as_bytes(), &mut out, Some(rec.clone()))
            .await
            .unwrap();
        assert_eq!(n, 1);
        let replies: Vec<Value> = out
            .split(|b| *b == b'\n')
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_slice(l).unwrap())
            .collect();
        assert_eq!(replies.len(), 3);
        assert_eq!(replies[1]["result"]["content"][0]["text"], "ok");
        assert_eq!(replies[2]["error"]["code"], -32601);
        let recorded: Value =
            serde_json::from_str(std::fs::read_to_string(rec).unwrap().trim()).unwrap();
        assert_eq!(
            recorded,
            json!({"id": 2, "name": "exec", "arguments": {"command": "ls"}})
        );
    }
}
