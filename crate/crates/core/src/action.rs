//! Normalized action schema.
//!
//! Every tool call arriving from a runtime is mapped into an [`ActionProposal`]
//! before the policy engine sees it. The mapping is table driven
//! ([`ToolMapping`]); tools that no mapping covers become `EXECUTE` proposals
//! so that they are escalated instead of slipping through.

use std::fmt;

use chrono::{DateTime, Utc};
use globset::{GlobBuilder, GlobMatcher};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionType {
    Read,
    Write,
    Delete,
    Execute,
    Sql,
    Network,
}

impl ActionType {
    pub const ALL: [ActionType; 6] = [
        ActionType::Read,
        ActionType::Write,
        ActionType::Delete,
        ActionType::Execute,
        ActionType::Sql,
        ActionType::Network,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionType::Read => "READ",
            ActionType::Write => "WRITE",
            ActionType::Delete => "DELETE",
            ActionType::Execute => "EXECUTE",
            ActionType::Sql => "SQL",
            ActionType::Network => "NETWORK",
        }
    }

    /// Parses a case-insensitive action name as written in policy files.
    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(s))
    }

    pub fn payload_kind(self) -> PayloadKind {
        match self {
            ActionType::Read | ActionType::Write | ActionType::Delete => PayloadKind::Path,
            ActionType::Execute => PayloadKind::Command,
            ActionType::Sql => PayloadKind::Sql,
            ActionType::Network => PayloadKind::Destination,
        }
    }
}

impl<'de> Deserialize<'de> for ActionType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ActionType::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown action type `{s}`")))
    }
}

impl fmt::Display for ActionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Path,
    Command,
    Sql,
    Destination,
}

impl PayloadKind {
    pub fn field_name(self) -> &'static str {
        match self {
            PayloadKind::Path => "path_arg",
            PayloadKind::Command => "command_arg",
            PayloadKind::Sql => "sql_arg",
            PayloadKind::Destination => "destination_arg",
        }
    }
}

/// The single payload an action carries. Serialized flat so the wire form has
/// exactly one of `target_path`, `command`, `sql` or `destination`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Path { target_path: String },
    Command { command: String },
    Sql { sql: String },
    Destination { destination: String },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Path { .. } => PayloadKind::Path,
            Payload::Command { .. } => PayloadKind::Command,
            Payload::Sql { .. } => PayloadKind::Sql,
            Payload::Destination { .. } => PayloadKind::Destination,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Payload::Path { target_path } => target_path,
            Payload::Command { command } => command,
            Payload::Sql { sql } => sql,
            Payload::Destination { destination } => destination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionProposal {
    pub id: String,
    pub session_id: String,
    pub runtime: String,
    pub tool: String,
    pub action_type: ActionType,
    #[serde(flatten)]
    pub payload: Payload,
    pub workspace_root: String,
    pub received_at: DateTime<Utc>,
}

impl ActionProposal {
    pub fn target_path(&self) -> Option<&str> {
        match &self.payload {
            Payload::Path { target_path } => Some(target_path),
            _ => None,
        }
    }

    pub fn command(&self) -> Option<&str> {
        match &self.payload {
            Payload::Command { command } => Some(command),
            _ => None,
        }
    }

    pub fn sql(&self) -> Option<&str> {
        match &self.payload {
            Payload::Sql { sql } => Some(sql),
            _ => None,
        }
    }

    pub fn destination(&self) -> Option<&str> {
        match &self.payload {
            Payload::Destination { destination } => Some(destination),
            _ => None,
        }
    }

    /// One-line summary of what the action touches.
    pub fn target_summary(&self) -> &str {
        self.payload.as_str()
    }

    /// True when the populated payload agrees with `action_type`.
    pub fn is_consistent(&self) -> bool {
        self.payload.kind() == self.action_type.payload_kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PathError {
    #[error("path is empty")]
    Empty,
    #[error("path `{0}` escapes above the filesystem root")]
    EscapesRoot(String),
    #[error("`~user` expansion is not supported: `{0}`")]
    UserTilde(String),
    #[error("base directory `{0}` is not absolute")]
    RelativeBase(String),
}

/// Lexically normalizes `raw` into an absolute path.
///
/// `~` and `~/...` expand to `home`; other relative paths resolve against
/// `workspace`. Symlinks are not consulted.
pub fn normalize_path(raw: &str, home: &str, workspace: &str) -> Result<String, PathError> {
    if raw.is_empty() {
        return Err(PathError::Empty);
    }
    let joined = if raw == "~" || raw.starts_with("~/") {
        require_absolute(home)?;
        format!("{home}/{}", &raw[1..])
    } else if raw.starts_with('~') {
        return Err(PathError::UserTilde(raw.to_string()));
    } else if raw.starts_with('/') {
        raw.to_string()
    } else {
        require_absolute(workspace)?;
        format!("{workspace}/{raw}")
    };
    lexical(&joined).ok_or_else(|| PathError::EscapesRoot(raw.to_string()))
}

fn require_absolute(base: &str) -> Result<(), PathError> {
    if base.starts_with('/') {
        Ok(())
    } else {
        Err(PathError::RelativeBase(base.to_string()))
    }
}

fn lexical(abs: &str) -> Option<String> {
    let mut parts: Vec<&str> = Vec::new();
    for seg in abs.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            s => parts.push(s),
        }
    }
    Some(format!("/{}", parts.join("/")))
}

/// Maps a tool name (glob over tool names, `*` wildcard) to an action type and
/// names the argument that carries the payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "RawToolMapping", into = "RawToolMapping")]
pub struct ToolMapping {
    tool: String,
    action: ActionType,
    arg_key: String,
    matcher: GlobMatcher,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawToolMapping {
    pub tool: String,
    pub action: ActionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path_arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_arg: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination_arg: Option<String>,
}

impl TryFrom<RawToolMapping> for ToolMapping {
    type Error = String;

    fn try_from(raw: RawToolMapping) -> Result<Self, String> {
        let set: Vec<(PayloadKind, String)> = [
            (PayloadKind::Path, raw.path_arg),
            (PayloadKind::Command, raw.command_arg),
            (PayloadKind::Sql, raw.sql_arg),
            (PayloadKind::Destination, raw.destination_arg),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect();
        if set.len() != 1 {
            return Err(format!(
                "tool mapping `{}` must set exactly one argument key, found {}",
                raw.tool,
                set.len()
            ));
        }
        let (kind, key) = set.into_iter().next().expect("length checked");
        let want = raw.action.payload_kind();
        if kind != want {
            return Err(format!(
                "tool mapping `{}` declares {} but action {} needs {}",
                raw.tool,
                kind.field_name(),
                raw.action,
                want.field_name()
            ));
        }
        ToolMapping::new(&raw.tool, raw.action, &key)
    }
}

impl From<ToolMapping> for RawToolMapping {
    fn from(m: ToolMapping) -> Self {
        let mut raw = RawToolMapping {
            tool: m.tool,
            action: m.action,
            path_arg: None,
            command_arg: None,
            sql_arg: None,
            destination_arg: None,
        };
        let slot = match m.action.payload_kind() {
            PayloadKind::Path => &mut raw.path_arg,
            PayloadKind::Command => &mut raw.command_arg,
            PayloadKind::Sql => &mut raw.sql_arg,
            PayloadKind::Destination => &mut raw.destination_arg,
        };
        *slot = Some(m.arg_key);
        raw
    }
}

impl ToolMapping {
    pub fn new(tool: &str, action: ActionType, arg_key: &str) -> Result<Self, String> {
        if tool.is_empty() || arg_key.is_empty() {
            return Err("tool mapping needs a tool pattern and an argument key".into());
        }
        let matcher = GlobBuilder::new(tool)
            .literal_separator(false)
            .build()
            .map_err(|e| format!("bad tool pattern `{tool}`: {e}"))?
            .compile_matcher();
        Ok(Self {
            tool: tool.to_string(),
            action,
            arg_key: arg_key.to_string(),
            matcher,
        })
    }

    pub fn tool_pattern(&self) -> &str {
        &self.tool
    }

    pub fn action(&self) -> ActionType {
        self.action
    }

    pub fn arg_key(&self) -> &str {
        &self.arg_key
    }

    pub fn matches(&self, tool: &str) -> bool {
        self.matcher.is_match(tool)
    }
}

/// Mapping table used when a policy file does not declare `tool_mappings`.
pub fn default_tool_mappings() -> Vec<ToolMapping> {
    use ActionType::*;
    [
        ("read_file", Read, "path"),
        ("write_file", Write, "path"),
        ("edit_file", Write, "path"),
        ("delete_file", Delete, "path"),
        ("exec", Execute, "command"),
        ("run_command", Execute, "command"),
        ("bash", Execute, "command"),
        ("query", Sql, "sql"),
        ("sql", Sql, "sql"),
        ("fetch", Network, "url"),
        ("http_request", Network, "url"),
    ]
    .into_iter()
    .map(|(t, a, k)| ToolMapping::new(t, a, k).expect("static mapping"))
    .collect()
}

/// Per-session facts the mapper needs besides the call itself.
#[derive(Debug, Clone)]
pub struct SessionContext {
    pub session_id: String,
    pub runtime: String,
    pub home: String,
    pub workspace_root: String,
}

/// A raw tool invocation as it came off the wire.
#[derive(Debug, Clone)]
pub struct ToolCall {
    pub id: String,
    pub tool: String,
    pub arguments: Map<String, Value>,
    pub received_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("tool `{tool}` is missing required argument `{key}`")]
    MissingArgument { tool: String, key: String },
    #[error("tool `{tool}` argument `{key}` must be a non-empty string")]
    BadArgument { tool: String, key: String },
    #[error("tool `{tool}`: {source}")]
    Path {
        tool: String,
        #[source]
        source: PathError,
    },
    #[error("tool `{tool}`: cannot extract a host from `{value}`")]
    BadDestination { tool: String, value: String },
}

impl MappingError {
    pub fn tool(&self) -> &str {
        match self {
            MappingError::MissingArgument { tool, .. }
            | MappingError::BadArgument { tool, .. }
            | MappingError::Path { tool, .. }
            | MappingError::BadDestination { tool, .. } => tool,
        }
    }
}

/// Maps one tool call to a normalized proposal. The first matching mapping
/// wins; unknown tools become `EXECUTE` proposals with a synthetic command.
pub fn map_tool_call(
    call: &ToolCall,
    mappings: &[ToolMapping],
    ctx: &SessionContext,
) -> Result<ActionProposal, MappingError> {
    let (action_type, payload) = match mappings.iter().find(|m| m.matches(&call.tool)) {
        Some(m) => (m.action, extract_payload(call, m, ctx)?),
        None => (
            ActionType::Execute,
            Payload::Command {
                command: fallback_command(&call.tool, &call.arguments),
            },
        ),
    };
    Ok(ActionProposal {
        id: call.id.clone(),
        session_id: ctx.session_id.clone(),
        runtime: ctx.runtime.clone(),
        tool: call.tool.clone(),
        action_type,
        payload,
        workspace_root: ctx.workspace_root.clone(),
        received_at: call.received_at,
    })
}

fn extract_payload(
    call: &ToolCall,
    mapping: &ToolMapping,
    ctx: &SessionContext,
) -> Result<Payload, MappingError> {
    let key = mapping.arg_key();
    let value = call
        .arguments
        .get(key)
        .ok_or_else(|| MappingError::MissingArgument {
            tool: call.tool.clone(),
            key: key.to_string(),
        })?;
    let value = match value.as_str() {
        Some(s) if !s.trim().is_empty() => s,
        _ => {
            return Err(MappingError::BadArgument {
                tool: call.tool.clone(),
                key: key.to_string(),
            })
        }
    };
    Ok(match mapping.action.payload_kind() {
        PayloadKind::Path => Payload::Path {
            target_path: normalize_path(value, &ctx.home, &ctx.workspace_root).map_err(
                |source| MappingError::Path {
                    tool: call.tool.clone(),
                    source,
                },
            )?,
        },
        PayloadKind::Command => Payload::Command {
            command: value.to_string(),
        },
        PayloadKind::Sql => Payload::Sql {
            sql: value.to_string(),
        },
        PayloadKind::Destination => Payload::Destination {
            destination: destination_host(value).ok_or_else(|| MappingError::BadDestination {
                tool: call.tool.clone(),
                value: value.to_string(),
            })?,
        },
    })
}

/// Extracts the lowercase host from a URL or bare `host[:port][/path]`.
pub fn destination_host(value: &str) -> Option<String> {
    let value = value.trim();
    let parsed = if value.contains("://") {
        url::Url::parse(value).ok()?
    } else {
        url::Url::parse(&format!("http://{value}")).ok()?
    };
    parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .map(|h| h.to_ascii_lowercase())
}

/// `tool:<name> <compact JSON of the arguments, keys sorted>`
pub fn fallback_command(tool: &str, arguments: &Map<String, Value>) -> String {
    // serde_json's Map is ordered by key unless `preserve_order` is enabled.
    let args = Value::Object(arguments.clone());
    format!("tool:{tool} {args}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn ctx() -> SessionContext {
        SessionContext {
            session_id: "s1".into(),
            runtime: "test".into(),
            home: "/Users/a".into(),
            workspace_root: "/Users/a/proj".into(),
        }
    }

    fn call(tool: &str, args: Value) -> ToolCall {
        ToolCall {
            id: "a1".into(),
            tool: tool.into(),
            arguments: args.as_object().cloned().unwrap_or_default(),
            received_at: Utc::now(),
        }
    }

    #[test]
    fn tilde_expands_to_home() {
        assert_eq!(
            normalize_path("~/.ssh/id_rsa", "/Users/a", "/Users/a/proj").unwrap(),
            "/Users/a/.ssh/id_rsa"
        );
        assert_eq!(normalize_path("~", "/h", "/w").unwrap(), "/h");
    }

    #[test]
    fn absolute_normalized_path_is_identity() {
        assert_eq!(normalize_path("/x/y", "/h", "/w").unwrap(), "/x/y");
    }

    #[test]
    fn relative_resolves_against_workspace() {
        assert_eq!(
            normalize_path("src/../src/main.c", "/h", "/w").unwrap(),
            "/w/src/main.c"
        );
        assert_eq!(normalize_path("./a//b/.", "/h", "/w").unwrap(), "/w/a/b");
    }

    #[test]
    fn normalization_errors() {
        assert_eq!(normalize_path("", "/h", "/w"), Err(PathError::Empty));
        assert!(matches!(
            normalize_path("/../etc", "/h", "/w"),
            Err(PathError::EscapesRoot(_))
        ));
        assert!(matches!(
            normalize_path("../../..", "/h", "/w"),
            Err(PathError::EscapesRoot(_))
        ));
        assert!(matches!(
            normalize_path("~bob/x", "/h", "/w"),
            Err(PathError::UserTilde(_))
        ));
        assert!(matches!(
            normalize_path("x", "/h", "rel"),
            Err(PathError::RelativeBase(_))
        ));
        assert_eq!(normalize_path("/..x", "/h", "/w").unwrap(), "/..x");
    }

    #[test]
    fn maps_read_inside_workspace() {
        let p = map_tool_call(
            &call("read_file", json!({"path": "README.md"})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap();
        assert_eq!(p.action_type, ActionType::Read);
        assert_eq!(p.target_path(), Some("/Users/a/proj/README.md"));
        assert!(p.is_consistent());
    }

    #[test]
    fn maps_exec_command_verbatim() {
        let p = map_tool_call(
            &call("exec", json!({"command": "ls -la"})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap();
        assert_eq!(p.action_type, ActionType::Execute);
        assert_eq!(p.command(), Some("ls -la"));
    }

    #[test]
    fn unknown_tool_becomes_execute() {
        let p = map_tool_call(
            &call("mystery_tool", json!({"x": 1})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap();
        assert_eq!(p.action_type, ActionType::Execute);
        assert_eq!(p.command(), Some(r#"tool:mystery_tool {"x":1}"#));
    }

    #[test]
    fn missing_argument_names_tool() {
        let err = map_tool_call(
            &call("read_file", json!({"file": "x"})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap_err();
        assert_eq!(err.tool(), "read_file");
        assert!(matches!(err, MappingError::MissingArgument { .. }));
        let err = map_tool_call(
            &call("exec", json!({"command": 5})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap_err();
        assert!(matches!(err, MappingError::BadArgument { .. }));
    }

    #[test]
    fn network_destination_is_host() {
        let p = map_tool_call(
            &call(
                "fetch",
                json!({"url": "https://API.Example.com:8443/v1?q=1"}),
            ),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap();
        assert_eq!(p.destination(), Some("api.example.com"));
        assert_eq!(
            destination_host("example.org/path").as_deref(),
            Some("example.org")
        );
    }

    #[test]
    fn first_mapping_wins_and_globs_work() {
        let maps = vec![
            ToolMapping::new("fs_*", ActionType::Delete, "target").unwrap(),
            ToolMapping::new("fs_read", ActionType::Read, "target").unwrap(),
        ];
        let p = map_tool_call(&call("fs_read", json!({"target": "/a"})), &maps, &ctx()).unwrap();
        assert_eq!(p.action_type, ActionType::Delete);
    }

    #[test]
    fn raw_mapping_validation() {
        let bad: Result<ToolMapping, _> =
            serde_yaml::from_str("{tool: x, action: READ, path_arg: p, command_arg: c}");
        assert!(bad.is_err());
        let mismatch: Result<ToolMapping, _> =
            serde_yaml::from_str("{tool: x, action: SQL, path_arg: p}");
        assert!(mismatch.is_err());
        let ok: ToolMapping = serde_yaml::from_str("{tool: x, action: SQL, sql_arg: q}").unwrap();
        assert_eq!(ok.arg_key(), "q");
    }

    #[test]
    fn proposal_serializes_one_payload_field() {
        let p = map_tool_call(
            &call("query", json!({"sql": "SELECT 1"})),
            &default_tool_mappings(),
            &ctx(),
        )
        .unwrap();
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["sql"], "SELECT 1");
        assert!(v.get("command").is_none() && v.get("target_path").is_none());
        let back: ActionProposal = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
