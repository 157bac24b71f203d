use std::time::{Duration, Instant};

use super::{classify_sql, PolicyDocument, PolicyRule, Verdict};
use crate::action::ActionProposal;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub verdict: Verdict,
    pub rule_id: Option<String>,
    pub latency: Duration,
}

impl Evaluation {
    pub fn latency_ms(&self) -> f64 {
        self.latency.as_secs_f64() * 1000.0
    }
}

/// First-match evaluation of `action` against `doc`.
pub fn evaluate(doc: &PolicyDocument, action: &ActionProposal) -> Evaluation {
    let start = Instant::now();
    let hit = doc.rules.iter().find(|r| rule_matches(r, action));
    let (verdict, rule_id) = match hit {
        Some(rule) => (rule.decision, Some(rule.id.clone())),
        None => (doc.defaults.decision, None),
    };
    Evaluation {
        verdict,
        rule_id,
        latency: start.elapsed(),
    }
}

pub fn rule_matches(rule: &PolicyRule, action: &ActionProposal) -> bool {
    if rule.action != action.action_type {
        return false;
    }
    if !rule.path_patterns.is_empty() {
        let Some(path) = action.target_path() else {
            return false;
        };
        if !rule
            .path_patterns
            .iter()
            .any(|p| p.matches(path, &action.workspace_root))
        {
            return false;
        }
    }
    if rule.command.is_some() || !rule.contains.is_empty() {
        let Some(cmd) = action.command() else {
            return false;
        };
        if let Some(m) = &rule.command {
            if !m.matches(cmd) {
                return false;
            }
        }
        if !rule.contains.is_empty() && !rule.contains.iter().any(|s| cmd.contains(s.as_str())) {
            return false;
        }
        if !rule.also_contains.is_empty()
            && !rule.also_contains.iter().any(|s| cmd.contains(s.as_str()))
        {
            return false;
        }
    }
    if !rule.sql_verbs.is_empty() {
        let Some(sql) = action.sql() else {
            return false;
        };
        let verb = classify_sql(sql);
        if !rule.sql_verbs.contains(&verb) {
            return false;
        }
    }
    if !rule.destination_patterns.is_empty() {
        let Some(host) = action.destination() else {
            return false;
        };
        if !rule.destination_patterns.iter().any(|d| d.matches(host)) {
            return false;
        }
    }
    true
}
