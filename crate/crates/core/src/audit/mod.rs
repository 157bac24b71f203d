//! Hash-chained JSONL audit log.
//!
//! Each line is one [`AuditEvent`]. `entry_hash` is the SHA-256 of the
//! previous entry's hash followed by the canonical JSON (sorted keys, no
//! whitespace) of every field except `entry_hash` itself. The first event
//! in a file chains from 64 zeros. Files are per UTC day:
//! `session-YYYY-MM-DD.jsonl`; sessions on the same day share a file and
//! are told apart by `session_id`.

mod replay;
mod verify;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::action::ActionType;
use crate::clock::format_millis;
use crate::policy::Verdict;

pub use replay::{
    list_sessions, read_events, render_table, ReadOutcome, ReplayFilter, SessionSummary,
};
pub use verify::{verify_chain, verify_lines, ChainStatus};

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecidedBy {
    Policy,
    RateLimit,
    Approval,
    Warning,
}

impl DecidedBy {
    pub fn as_str(self) -> &'static str {
        match self {
            DecidedBy::Policy => "policy",
            DecidedBy::RateLimit => "rate-limit",
            DecidedBy::Approval => "approval",
            DecidedBy::Warning => "warning",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEvent {
    pub seq: u64,
    pub ts: String,
    pub session_id: String,
    pub runtime: String,
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_type: Option<ActionType>,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Verdict>,
    pub decided_by: DecidedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    pub latency_ms: f64,
    pub policy_version: String,
    pub reload_detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub prev_hash: String,
    pub entry_hash: String,
}

impl AuditEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit event serializes")
    }
}

/// Everything about an event except its position in the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRecord {
    pub ts: DateTime<Utc>,
    pub session_id: String,
    pub runtime: String,
    pub tool: String,
    pub action_id: Option<String>,
    pub action_type: Option<ActionType>,
    pub target: String,
    pub decision: Option<Verdict>,
    pub decided_by: DecidedBy,
    pub rule_id: Option<String>,
    pub latency_ms: f64,
    pub policy_version: String,
    pub reload_detected: bool,
    pub note: Option<String>,
}

impl AuditRecord {
    fn into_event(self, seq: u64, prev_hash: String) -> AuditEvent {
        let mut event = AuditEvent {
            seq,
            ts: format_millis(self.ts),
            session_id: self.session_id,
            runtime: self.runtime,
            tool: self.tool,
            action_id: self.action_id,
            action_type: self.action_type,
            target: self.target,
            decision: self.decision,
            decided_by: self.decided_by,
            rule_id: self.rule_id,
            latency_ms: round_latency(self.latency_ms),
            policy_version: self.policy_version,
            reload_detected: self.reload_detected,
            note: self.note,
            prev_hash,
            entry_hash: String::new(),
        };
        let mut value = serde_json::to_value(&event).expect("audit event serializes");
        event.entry_hash = entry_hash_of(&mut value);
        event
    }
}

/// Latency is stored to 0.1 µs so that its JSON text never switches to
/// exponent notation.
pub fn round_latency(ms: f64) -> f64 {
    if ms.is_finite() && ms > 0.0 {
        (ms * 10_000.0).round() / 10_000.0
    } else {
        0.0
    }
}

/// Hash for an event given as a JSON object. `entry_hash`, if present, is
/// removed first. Returns an empty string for non-objects.
pub(crate) fn entry_hash_of(value: &mut Value) -> String {
    let Value::Object(map) = value else {
        return String::new();
    };
    map.remove("entry_hash");
    let prev = map
        .get("prev_hash")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    // serde_json::Map keeps keys sorted, which makes this canonical
    let canonical = serde_json::to_string(&*map).expect("json serializes");
    let mut hasher = Sha256::new();
    hasher.update(prev.as_bytes());
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

pub fn session_file_name(date: NaiveDate) -> String {
    format!("session-{}.jsonl", date.format("%Y-%m-%d"))
}

struct Tail {
    path: PathBuf,
    len: u64,
    seq: u64,
    hash: String,
}

/// Single writer for a session directory.
///
/// Appends take an exclusive file lock and re-read the tail if another
/// process has grown the file, so several proxies can share a day file
/// without forking the chain.
pub struct AuditLog {
    dir: PathBuf,
    tail: Mutex<Option<Tail>>,
}

impl std::fmt::Debug for AuditLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AuditLog").field("dir", &self.dir).finish()
    }
}

impl AuditLog {
    /// Creates the directory if needed and checks that it is writable.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let probe = dir.join(format!(".write-probe-{}", std::process::id()));
        File::create(&probe)?;
        fs::remove_file(&probe)?;
        Ok(Self {
            dir,
            tail: Mutex::new(None),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, date: NaiveDate) -> PathBuf {
        self.dir.join(session_file_name(date))
    }

    /// Appends and syncs one event; returns it with seq and hashes filled.
    pub fn append(&self, record: AuditRecord) -> io::Result<AuditEvent> {
        let path = self.path_for(record.ts.date_naive());
        let mut guard = self.tail.lock();
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&path)?;
        file.lock()?;
        let result = (|| {
            let len = file.metadata()?.len();
            let cached = guard
                .as_ref()
                .filter(|t| t.path == path && t.len == len)
                .map(|t| (t.seq, t.hash.clone()));
            let (seq, prev) = match cached {
                Some(c) => c,
                None => scan_tail(&mut file)?,
            };
            let event = record.into_event(seq + 1, prev);
            let mut line = event.to_line();
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.sync_data()?;
            *guard = Some(Tail {
                path: path.clone(),
                len: len + line.len() as u64,
                seq: event.seq,
                hash: event.entry_hash.clone(),
            });
            Ok(event)
        })();
        let _ = file.unlock();
        result
    }
}

/// Last complete event's seq and hash, or (0, genesis) for a fresh file.
fn scan_tail(file: &mut File) -> io::Result<(u64, String)> {
    file.seek(SeekFrom::Start(0))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let last = buf
        .split(|b| *b == b'\n')
        .rev()
        .filter(|l| !l.is_empty())
        .find_map(|l| serde_json::from_slice::<AuditEvent>(l).ok());
    Ok(match last {
        Some(e) => (e.seq, e.entry_hash),
        None => (0, GENESIS_HASH.to_string()),
    })
}
