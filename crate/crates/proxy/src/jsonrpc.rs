//! Just enough JSON-RPC 2.0 to route newline-delimited MCP traffic.
//!
//! Messages are classified but never re-serialized when forwarded; the
//! original line bytes go out unchanged.

use serde_json::{json, Map, Value};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request {
        id: Value,
        method: String,
        params: Option<Value>,
    },
    Notification {
        method: String,
    },
    Response {
        id: Value,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Malformed {
    /// Not JSON at all.
    Parse(String),
    /// JSON, but not a single JSON-RPC object (batches included).
    Invalid(String),
}

impl std::fmt::Display for Malformed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Malformed::Parse(m) => write!(f, "parse error: {m}"),
            Malformed::Invalid(m) => write!(f, "invalid request: {m}"),
        }
    }
}

impl Malformed {
    pub fn code(&self) -> i64 {
        match self {
            Malformed::Parse(_) => PARSE_ERROR,
            Malformed::Invalid(_) => INVALID_REQUEST,
        }
    }
}

fn valid_id(id: &Value) -> bool {
    matches!(id, Value::String(_) | Value::Number(_) | Value::Null)
}

pub fn classify(line: &[u8]) -> Result<Message, Malformed> {
    let value: Value = serde_json::from_slice(line).map_err(|e| Malformed::Parse(e.to_string()))?;
    let Value::Object(obj) = value else {
        let what = if value.is_array() {
            "batch"
        } else {
            "non-object"
        };
        return Err(Malformed::Invalid(format!(
            "{what} messages are not accepted"
        )));
    };
    match (obj.get("method"), obj.get("id")) {
        (Some(Value::String(method)), Some(id)) if valid_id(id) => Ok(Message::Request {
            id: id.clone(),
            method: method.clone(),
            params: obj.get("params").cloned(),
        }),
        (Some(Value::String(method)), None) => Ok(Message::Notification {
            method: method.clone(),
        }),
        (Some(_), _) => Err(Malformed::Invalid("bad method or id".into())),
        (None, Some(id))
            if valid_id(id) && (obj.contains_key("result") || obj.contains_key("error")) =>
        {
            Ok(Message::Response { id: id.clone() })
        }
        (None, _) => Err(Malformed::Invalid("neither request nor response".into())),
    }
}

/// Tool name and arguments of a `tools/call` request.
pub fn tool_call_params(params: Option<&Value>) -> Result<(String, Map<String, Value>), String> {
    let params = params
        .and_then(Value::as_object)
        .ok_or("tools/call params must be an object")?;
    let name = params
        .get("name")
        .and_then(Value::as_str)
        .ok_or("tools/call params.name must be a string")?;
    let arguments = match params.get("arguments") {
        None | Some(Value::Null) => Map::new(),
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err("tools/call params.arguments must be an object".into()),
    };
    Ok((name.to_string(), arguments))
}

/// `clientInfo` from an `initialize` request as "name" or "name/version".
pub fn client_runtime(params: Option<&Value>) -> Option<String> {
    let info = params?.get("clientInfo")?;
    let name = info.get("name")?.as_str()?;
    Some(match info.get("version").and_then(Value::as_str) {
        Some(v) => format!("{name}/{v}"),
        None => name.to_string(),
    })
}

/// A successful response whose result is a tool-level error.
pub fn tool_error(id: &Value, text: &str) -> Vec<u8> {
    line(json!({
        "jsonrpc": "2.0",
        "id": id,
        "result": {
            "content": [{ "type": "text", "text": text }],
            "isError": true,
        },
    }))
}

pub fn error_response(id: &Value, code: i64, message: &str) -> Vec<u8> {
    line(json!({
        "jsonrpc": "2.0",
        "id": id,
        "error": { "code": code, "message": message },
    }))
}

fn line(v: Value) -> Vec<u8> {
    let mut out = serde_json::to_vec(&v).expect("json values serialize");
    out.push(b'\n');
    out
}

/// Map key for a request id; `1` and `"1"` stay distinct.
pub fn id_key(id: &Value) -> String {
    id.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_messages() {
        assert_eq!(
            classify(br#"{"jsonrpc":"2.0","id":"x-1","method":"tools/list"}"#).unwrap(),
            Message::Request {
                id: json!("x-1"),
                method: "tools/list".into(),
                params: None
            }
        );
        assert_eq!(
            classify(br#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#).unwrap(),
            Message::Notification {
                method: "notifications/initialized".into()
            }
        );
        assert_eq!(
            classify(br#"{"jsonrpc":"2.0","id":7,"result":{}}"#).unwrap(),
            Message::Response { id: json!(7) }
        );
        assert!(matches!(classify(b"{nope"), Err(Malformed::Parse(_))));
        assert!(matches!(classify(b"[1,2]"), Err(Malformed::Invalid(_))));
        assert!(matches!(
            classify(br#"{"id":{"a":1},"method":"x"}"#),
            Err(Malformed::Invalid(_))
        ));
    }

    #[test]
    fn tool_call_params_are_checked() {
        let p = json!({"name": "exec", "arguments": {"command": "ls"}});
        let (name, args) = tool_call_params(Some(&p)).unwrap();
        assert_eq!(name, "exec");
        assert_eq!(args["command"], "ls");
        assert!(tool_call_params(Some(&json!({"name": "x"})))
            .unwrap()
            .1
            .is_empty());
        assert!(tool_call_params(Some(&json!({"arguments": {}}))).is_err());
        assert!(tool_call_params(Some(&json!({"name": "x", "arguments": [1]}))).is_err());
        assert!(tool_call_params(None).is_err());
    }

    #[test]
    fn runtime_from_client_info() {
        let p = json!({"clientInfo": {"name": "cursor", "version": "1.2"}});
        assert_eq!(client_runtime(Some(&p)).as_deref(), Some("cursor/1.2"));
        assert_eq!(client_runtime(Some(&json!({}))), None);
    }

    #[test]
    fn tool_error_shape() {
        let v: Value = serde_json::from_slice(&tool_error(&json!(3), "no")).unwrap();
        assert_eq!(v["id"], 3);
        assert_eq!(v["result"]["isError"], true);
        assert_eq!(v["result"]["content"][0]["text"], "no");
        assert_ne!(id_key(&json!(1)), id_key(&json!("1")));
    }
}
