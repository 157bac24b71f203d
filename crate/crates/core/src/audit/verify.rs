use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use super::{entry_hash_of, GENESIS_HASH};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ChainStatus {
    Ok {
        events: u64,
    },
    /// `seq` is the position the chain breaks at: the sequence number the
    /// offending line should have carried.
    Corrupt {
        seq: u64,
        line: usize,
        reason: String,
    },
}

impl ChainStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainStatus::Ok { .. })
    }
}

impl std::fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChainStatus::Ok { events } => write!(f, "OK ({events} events)"),
            ChainStatus::Corrupt { seq, line, reason } => {
                write!(f, "CORRUPT at seq {seq} (line {line}): {reason}")
            }
        }
    }
}

/// Walks the file's hash chain. Every non-empty line must parse.
pub fn verify_chain(path: &Path) -> io::Result<ChainStatus> {
    let bytes = std::fs::read(path)?;
    Ok(verify_lines(&bytes))
}

pub fn verify_lines(bytes: &[u8]) -> ChainStatus {
    let mut prev = GENESIS_HASH.to_string();
    let mut expected_seq = 1u64;
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    if body.is_empty() {
        return ChainStatus::Ok { events: 0 };
    }
    for (idx, raw) in body.split(|b| *b == b'\n').enumerate() {
        let line = idx + 1;
        let corrupt = |reason: String| ChainStatus::Corrupt {
            seq: expected_seq,
            line,
            reason,
        };
        let mut value: Value = match serde_json::from_slice(raw) {
            Ok(v @ Value::Object(_)) => v,
            Ok(_) => return corrupt("line is not a JSON object".into()),
            Err(e) => return corrupt(format!("unparseable line: {e}")),
        };
        match value.get("seq").and_then(Value::as_u64) {
            Some(s) if s == expected_seq => {}
            Some(s) => return corrupt(format!("expected seq {expected_seq}, found {s}")),
            None => return corrupt("missing seq".into()),
        }
        if value.get("prev_hash").and_then(Value::as_str) != Some(prev.as_str()) {
            return corrupt("prev_hash does not match the previous entry".into());
        }
        let stored = match value.get("entry_hash").and_then(Value::as_str) {
            Some(h) => h.to_string(),
            None => return corrupt("missing entry_hash".into()),
        };
        let recomputed = entry_hash_of(&mut value);
        if recomputed != stored {
            return corrupt("entry_hash does not match the entry contents".into());
        }
        prev = stored;
        expected_seq += 1;
    }
    ChainStatus::Ok {
        events: expected_seq - 1,
    }
}
