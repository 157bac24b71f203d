//! Declarative policy: parsing, evaluation and hot reload.
//!
//! A policy file is YAML with the top-level keys `version`, `defaults`,
//! `rules`, `rate_limits` and `tool_mappings`. Rules are evaluated in file
//! order and the first rule that matches decides; when nothing matches the
//! default decision applies.

mod command;
mod eval;
mod pattern;
mod reload;
mod sql;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::action::{default_tool_mappings, ActionType, PayloadKind, ToolMapping};

pub use command::{match_command, match_command_with};
pub use eval::{evaluate, rule_matches, Evaluation};
pub use pattern::{DomainPattern, PathPattern};
pub use reload::{reload_if_changed, PolicyStore, ReloadOutcome};
pub use sql::classify_sql;

/// The shipped default policy.
pub const DEFAULT_POLICY_YAML: &str = include_str!("default_policy.yaml");

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Allow,
    Deny,
    Ask,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Allow => "ALLOW",
            Verdict::Deny => "DENY",
            Verdict::Ask => "ASK",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Verdict::Allow, Verdict::Deny, Verdict::Ask]
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Verdict::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown decision `{s}`")))
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Facts about the host that patterns are resolved against at parse time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyEnv {
    pub home: String,
}

impl PolicyEnv {
    pub fn new(home: impl Into<String>) -> Self {
        Self { home: home.into() }
    }

    /// Reads `HOME`, falling back to `/`.
    pub fn from_system() -> Self {
        Self::new(std::env::var("HOME").unwrap_or_else(|_| "/".to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("policy syntax error: {0}")]
    Syntax(String),
    #[error("policy is invalid:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl PolicyError {
    /// Every violation as a separate message.
    pub fn violations(&self) -> Vec<String> {
        match self {
            PolicyError::Invalid(v) => v.clone(),
            other => vec![other.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => vec![s.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    version: u32,
    #[serde(default)]
    defaults: RawDefaults,
    #[serde(default)]
    rules: Vec<RawRule>,
    #[serde(default)]
    rate_limits: Vec<RateLimitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tool_mappings: Option<Vec<ToolMapping>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefaults {
    #[serde(default = "default_decision")]
    decision: Verdict,
    #[serde(default = "default_timeout")]
    approval_timeout_seconds: u64,
}

impl Default for RawDefaults {
    fn default() -> Self {
        Self {
            decision: default_decision(),
            approval_timeout_seconds: default_timeout(),
        }
    }
}

fn default_decision() -> Verdict {
    Verdict::Ask
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    action: ActionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    path_pattern: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    command_pattern: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    exact_path: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contains: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    also_contains: Option<OneOrMany>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sql_verbs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    destination_pattern: Option<OneOrMany>,
    decision: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Defaults {
    pub decision: Verdict,
    pub approval_timeout_seconds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitConfig {
    pub tool: String,
    pub max_calls: u32,
    pub window_seconds: u64,
}

/// Matcher for `EXECUTE` commands: any of the token patterns.
#[derive(Debug, Clone)]
pub struct CommandMatcher {
    pub patterns: Vec<String>,
    pub exact_path: bool,
}

impl CommandMatcher {
    pub fn matches(&self, command: &str) -> bool {
        self.patterns
            .iter()
            .any(|p| match_command_with(p, command, self.exact_path))
    }
}

/// One compiled rule. All matchers that are set must hold.
#[derive(Debug, Clone)]
pub struct PolicyRule {
    pub id: String,
    pub action: ActionType,
    pub path_patterns: Vec<PathPattern>,
    pub command: Option<CommandMatcher>,
    pub contains: Vec<String>,
    pub also_contains: Vec<String>,
    pub sql_verbs: Vec<String>,
    pub destination_patterns: Vec<DomainPattern>,
    pub decision: Verdict,
}

#[derive(Debug, Clone)]
pub struct PolicyDocument {
    pub version: u32,
    pub defaults: Defaults,
    pub rules: Vec<PolicyRule>,
    pub rate_limits: Vec<RateLimitConfig>,
    pub tool_mappings: Vec<ToolMapping>,
    /// SHA-256 of the file bytes; reported as the policy version.
    pub content_hash: String,
    source: RawPolicy,
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses policy bytes against the current system environment.
pub fn parse_policy(bytes: &[u8]) -> Result<PolicyDocument, PolicyError> {
    PolicyDocument::parse(bytes, &PolicyEnv::from_system())
}

impl PolicyDocument {
    pub fn parse(bytes: &[u8], env: &PolicyEnv) -> Result<Self, PolicyError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| PolicyError::Syntax(format!("policy is not UTF-8: {e}")))?;
        if text.trim().is_empty() {
            return Err(PolicyError::Syntax("policy file is empty".into()));
        }
        let raw: RawPolicy =
            serde_yaml::from_str(text).map_err(|e| PolicyError::Syntax(e.to_string()))?;
        compile(raw, env, content_hash(bytes))
    }

    pub fn load(path: &Path, env: &PolicyEnv) -> Result<Self, PolicyError> {
        let bytes = std::fs::read(path).map_err(|source| PolicyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&bytes, env)
    }

    /// The shipped default policy.
    pub fn default_policy(env: &PolicyEnv) -> Self {
        Self::parse(DEFAULT_POLICY_YAML.as_bytes(), env).expect("shipped policy is valid")
    }

    pub fn rule(&self, id: &str) -> Option<&PolicyRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn rate_limit_for(&self, tool: &str) -> Option<&RateLimitConfig> {
        self.rate_limits.iter().find(|r| r.tool == tool)
    }

    /// The document as written (before compilation), plus its hash.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.source).expect("policy serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.insert(
                "content_hash".into(),
                serde_json::Value::String(self.content_hash.clone()),
            );
            map.insert(
                "defaults".into(),
                serde_json::to_value(self.defaults).unwrap(),
            );
        }
        v
    }
}

fn compile(raw: RawPolicy, env: &PolicyEnv, hash: String) -> Result<PolicyDocument, PolicyError> {
    let mut errs = Vec::new();
    if raw.version != SCHEMA_VERSION {
        errs.push(format!(
            "unsupported version {} (expected {SCHEMA_VERSION})",
            raw.version
        ));
    }
    if raw.defaults.approval_timeout_seconds == 0 {
        errs.push("defaults.approval_timeout_seconds must be positive".into());
    }

    let mut seen = HashSet::new();
    let mut rules = Vec::with_capacity(raw.rules.len());
    for (idx, r) in raw.rules.iter().enumerate() {
        if r.id.trim().is_empty() {
            errs.push(format!("rule #{}: id is empty", idx + 1));
        } else if !seen.insert(r.id.as_str()) {
            errs.push(format!("duplicate rule id `{}`", r.id));
        }
        match compile_rule(r, env) {
            Ok(rule) => rules.push(rule),
            Err(mut e) => errs.append(&mut e),
        }
    }

    let mut limited = HashSet::new();
    for rl in &raw.rate_limits {
        if rl.tool.is_empty() {
            errs.push("rate limit with empty tool name".into());
        }
        if rl.max_calls == 0 {
            errs.push(format!(
                "rate limit `{}`: max_calls must be positive",
                rl.tool
            ));
        }
        if rl.window_seconds == 0 {
            errs.push(format!(
                "rate limit `{}`: window_seconds must be positive",
                rl.tool
            ));
        }
        if !limited.insert(rl.tool.as_str()) {
            errs.push(format!("duplicate rate limit for tool `{}`", rl.tool));
        }
    }

    let tool_mappings = match &raw.tool_mappings {
        Some(list) if list.is_empty() => {
            errs.push("tool_mappings is present but empty".into());
            Vec::new()
        }
        Some(list) => list.clone(),
        None => default_tool_mappings(),
    };

    if !errs.is_empty() {
        return Err(PolicyError::Invalid(errs));
    }
    Ok(PolicyDocument {
        version: raw.version,
        defaults: Defaults {
            decision: raw.defaults.decision,
            approval_timeout_seconds: raw.defaults.approval_timeout_seconds,
        },
        rules,
        rate_limits: raw.rate_limits.clone(),
        tool_mappings,
        content_hash: hash,
        source: raw,
    })
}

fn compile_rule(r: &RawRule, env: &PolicyEnv) -> Result<PolicyRule, Vec<String>> {
    let mut errs = Vec::new();
    let kind = r.action.payload_kind();
    let id = &r.id;
    let mut wrong_action = |field: &str, want: &str| {
        errs.push(format!(
            "rule `{id}`: `{field}` only applies to {want} rules, not {}",
            r.action
        ));
    };
    if r.path_pattern.is_some() && kind != PayloadKind::Path {
        wrong_action("path_pattern", "READ/WRITE/DELETE");
    }
    if r.command_pattern.is_some() && kind != PayloadKind::Command {
        wrong_action("command_pattern", "EXECUTE");
    }
    if r.contains.is_some() && kind != PayloadKind::Command {
        wrong_action("contains", "EXECUTE");
    }
    if r.also_contains.is_some() && kind != PayloadKind::Command {
        wrong_action("also_contains", "EXECUTE");
    }
    if r.sql_verbs.is_some() && kind != PayloadKind::Sql {
        wrong_action("sql_verbs", "SQL");
    }
    if r.destination_pattern.is_some() && kind != PayloadKind::Destination {
        wrong_action("destination_pattern", "NETWORK");
    }
    if r.exact_path && r.command_pattern.is_none() {
        errs.push(format!(
            "rule `{id}`: `exact_path` requires `command_pattern`"
        ));
    }
    if r.also_contains.is_some() && r.contains.is_none() {
        errs.push(format!("rule `{id}`: `also_contains` requires `contains`"));
    }
    let any_matcher = r.path_pattern.is_some()
        || r.command_pattern.is_some()
        || r.contains.is_some()
        || r.sql_verbs.is_some()
        || r.destination_pattern.is_some();
    if !any_matcher {
        errs.push(format!(
            "rule `{id}`: at least one matcher field is required"
        ));
    }

    let mut non_empty = |field: &str, list: &[String]| {
        if list.is_empty() || list.iter().any(|s| s.trim().is_empty()) {
            errs.push(format!("rule `{id}`: `{field}` entries must be non-empty"));
        }
    };
    let paths = r
        .path_pattern
        .as_ref()
        .map(OneOrMany::to_vec)
        .unwrap_or_default();
    let commands = r.command_pattern.as_ref().map(OneOrMany::to_vec);
    let contains = r
        .contains
        .as_ref()
        .map(OneOrMany::to_vec)
        .unwrap_or_default();
    let also = r
        .also_contains
        .as_ref()
        .map(OneOrMany::to_vec)
        .unwrap_or_default();
    let domains = r
        .destination_pattern
        .as_ref()
        .map(OneOrMany::to_vec)
        .unwrap_or_default();
    if r.path_pattern.is_some() {
        non_empty("path_pattern", &paths);
    }
    if let Some(c) = &commands {
        non_empty("command_pattern", c);
    }
    if r.contains.is_some() {
        non_empty("contains", &contains);
    }
    if r.also_contains.is_some() {
        non_empty("also_contains", &also);
    }
    if r.destination_pattern.is_some() {
        non_empty("destination_pattern", &domains);
    }
    if let Some(verbs) = &r.sql_verbs {
        non_empty("sql_verbs", verbs);
        if verbs
            .iter()
            .any(|v| !v.chars().all(|c| c.is_ascii_alphabetic() || c == '_'))
        {
            errs.push(format!("rule `{id}`: `sql_verbs` must be bare keywords"));
        }
    }

    let mut path_patterns = Vec::new();
    for p in &paths {
        match PathPattern::parse(p, &env.home) {
            Ok(pp) => path_patterns.push(pp),
            Err(e) => errs.push(format!("rule `{id}`: {e}")),
        }
    }
    let mut destination_patterns = Vec::new();
    for d in &domains {
        match DomainPattern::parse(d) {
            Ok(dp) => destination_patterns.push(dp),
            Err(e) => errs.push(format!("rule `{id}`: {e}")),
        }
    }

    if !errs.is_empty() {
        return Err(errs);
    }
    Ok(PolicyRule {
        id: r.id.clone(),
        action: r.action,
        path_patterns,
        command: commands.map(|patterns| CommandMatcher {
            patterns,
            exact_path: r.exact_path,
        }),
        contains,
        also_contains: also,
        sql_verbs: r
            .sql_verbs
            .as_ref()
            .map(|v| v.iter().map(|s| s.to_ascii_uppercase()).collect())
            .unwrap_or_default(),
        destination_patterns,
        decision: r.decision,
    })
}
