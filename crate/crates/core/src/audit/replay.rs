//! Trace reconstruction from session files. Nothing is re-executed.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::Serialize;

use super::AuditEvent;
use crate::policy::Verdict;

/// Conjunctive filters; unset fields match everything.
#[derive(Debug, Clone, Default)]
pub struct ReplayFilter {
    pub session_id: Option<String>,
    pub decision: Option<Verdict>,
    pub tool: Option<String>,
    pub since: Option<DateTime<Utc>>,
    pub until: Option<DateTime<Utc>>,
}

impl ReplayFilter {
    pub fn matches(&self, e: &AuditEvent) -> bool {
        if self
            .session_id
            .as_deref()
            .is_some_and(|s| s != e.session_id)
        {
            return false;
        }
        if self.decision.is_some() && self.decision != e.decision {
            return false;
        }
        if self.tool.as_deref().is_some_and(|t| t != e.tool) {
            return false;
        }
        if self.since.is_some() || self.until.is_some() {
            let Ok(ts) = DateTime::parse_from_rfc3339(&e.ts) else {
                return false;
            };
            let ts = ts.with_timezone(&Utc);
            if self.since.is_some_and(|s| ts < s) || self.until.is_some_and(|u| ts > u) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct ReadOutcome {
    pub events: Vec<AuditEvent>,
    /// A trailing line that did not parse (a write still in progress).
    pub partial_tail: bool,
}

/// Reads events in file order, tolerating an unfinished last line. Other
/// unparseable lines are skipped; `verify_chain` reports them.
pub fn read_events(path: &Path) -> io::Result<ReadOutcome> {
    let bytes = std::fs::read(path)?;
    let complete = bytes.ends_with(b"\n") || bytes.is_empty();
    let mut events = Vec::new();
    let mut partial_tail = false;
    let lines: Vec<&[u8]> = bytes.split(|b| *b == b'\n').collect();
    let n = lines.len();
    for (i, raw) in lines.into_iter().enumerate() {
        if raw.is_empty() {
            continue;
        }
        match serde_json::from_slice::<AuditEvent>(raw) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == n && !complete => partial_tail = true,
            Err(_) => {}
        }
    }
    Ok(ReadOutcome {
        events,
        partial_tail,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct SessionSummary {
    pub file: PathBuf,
    pub session_id: String,
    pub events: usize,
    pub first_ts: String,
    pub last_ts: String,
}

/// Every session found in `session-*.jsonl` files under `dir`, oldest file
/// first.
pub fn list_sessions(dir: &Path) -> io::Result<Vec<SessionSummary>> {
    let mut files: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("session-") && n.ends_with(".jsonl"))
            })
            .collect(),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e),
    };
    files.sort();
    let mut out = Vec::new();
    for file in files {
        let mut by_session: BTreeMap<String, SessionSummary> = BTreeMap::new();
        let mut order = Vec::new();
        for e in read_events(&file)?.events {
            let entry = by_session.entry(e.session_id.clone()).or_insert_with(|| {
                order.push(e.session_id.clone());
                SessionSummary {
                    file: file.clone(),
                    session_id: e.session_id.clone(),
                    events: 0,
                    first_ts: e.ts.clone(),
                    last_ts: e.ts.clone(),
                }
            });
            entry.events += 1;
            entry.last_ts = e.ts.clone();
        }
        for id in order {
            out.push(by_session.remove(&id).expect("present"));
        }
    }
    Ok(out)
}

/// Aligned text table of events.
pub fn render_table(events: &[AuditEvent]) -> String {
    let headers = [
        "SEQ", "TIME", "SESSION", "DECISION", "BY", "RULE", "TOOL", "TYPE", "TARGET", "MS",
    ];
    let rows: Vec<[String; 10]> = events
        .iter()
        .map(|e| {
            [
                e.seq.to_string(),
                e.ts.clone(),
                e.session_id.clone(),
                e.decision
                    .map(|d| d.to_string())
                    .unwrap_or_else(|| "-".into()),
                e.decided_by.as_str().to_string(),
                e.rule_id.clone().unwrap_or_else(|| "-".into()),
                e.tool.clone(),
                e.action_type
                    .map(|t| t.to_string())
                    .unwrap_or_else(|| "-".into()),
                clip(&e.target, 48),
                format!("{:.3}", e.latency_ms),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let mut push_row = |cells: &[String]| {
        let line: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(&headers.map(String::from));
    for row in &rows {
        push_row(row);
    }
    out
}

fn clip(s: &str, max: usize) -> String {
    let flat = s.replace(['\n', '\r', '\t'], " ");
    if flat.chars().count() <= max {
        flat
    } else {
        let mut c: String = flat.chars().take(max - 1).collect();
        c.push('…');
        c
    }
}
