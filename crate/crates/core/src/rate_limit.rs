//! Per-tool sliding-window call caps.
//!
//! A window remembers the timestamps of calls it let through. A probe at
//! `now` first drops every timestamp at or before `now - window`, so the
//! window is the half-open interval `(now - window, now]`. If fewer than
//! `max_calls` remain the call is recorded and allowed; otherwise it is
//! limited and nothing is recorded.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::Serialize;

use crate::policy::RateLimitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum RateDecision {
    Allowed,
    Limited,
}

#[derive(Debug, Clone)]
pub struct RateWindow {
    tool: String,
    max_calls: u32,
    window_ms: i64,
    timestamps: VecDeque<i64>,
}

impl RateWindow {
    pub fn new(tool: impl Into<String>, max_calls: u32, window_seconds: u64) -> Self {
        Self {
            tool: tool.into(),
            max_calls,
            window_ms: (window_seconds as i64).saturating_mul(1000),
            timestamps: VecDeque::new(),
        }
    }

    pub fn from_config(cfg: &RateLimitConfig) -> Self {
        Self::new(cfg.tool.clone(), cfg.max_calls, cfg.window_seconds)
    }

    pub fn tool(&self) -> &str {
        &self.tool
    }

    pub fn max_calls(&self) -> u32 {
        self.max_calls
    }

    pub fn window_seconds(&self) -> u64 {
        (self.window_ms / 1000) as u64
    }

    /// Timestamps (ms) of allowed calls still on record.
    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        self.timestamps.iter().copied()
    }

    /// `now_ms` must not be earlier than any recorded timestamp.
    pub fn check_and_consume(&mut self, now_ms: i64) -> RateDecision {
        let cutoff = now_ms - self.window_ms;
        while self.timestamps.front().is_some_and(|&t| t <= cutoff) {
            self.timestamps.pop_front();
        }
        if self.timestamps.len() < self.max_calls as usize {
            self.timestamps.push_back(now_ms);
            RateDecision::Allowed
        } else {
            RateDecision::Limited
        }
    }

    fn reconfigure(&mut self, cfg: &RateLimitConfig) {
        self.max_calls = cfg.max_calls;
        self.window_ms = (cfg.window_seconds as i64).saturating_mul(1000);
    }
}

/// All windows for one proxy process, keyed by raw tool name.
#[derive(Debug, Default)]
pub struct RateLimiter {
    windows: Mutex<HashMap<String, Arc<Mutex<RateWindow>>>>,
}

impl RateLimiter {
    pub fn new(limits: &[RateLimitConfig]) -> Self {
        let limiter = Self::default();
        limiter.sync_config(limits);
        limiter
    }

    /// Applies a (possibly reloaded) limit list. Windows for tools that stay
    /// limited keep their history; windows for dropped tools go away.
    pub fn sync_config(&self, limits: &[RateLimitConfig]) {
        let mut windows = self.windows.lock();
        windows.retain(|tool, _| limits.iter().any(|l| &l.tool == tool));
        for cfg in limits {
            match windows.get(&cfg.tool) {
                Some(w) => w.lock().reconfigure(cfg),
                None => {
                    windows.insert(
                        cfg.tool.clone(),
                        Arc::new(Mutex::new(RateWindow::from_config(cfg))),
                    );
                }
            }
        }
    }

    /// Tools without a configured limit are always allowed.
    pub fn check_and_consume(&self, tool: &str, now_ms: i64) -> RateDecision {
        let window = self.windows.lock().get(tool).cloned();
        match window {
            Some(w) => w.lock().check_and_consume(now_ms),
            None => RateDecision::Allowed,
        }
    }

    pub fn limit_for(&self, tool: &str) -> Option<(u32, u64)> {
        self.windows.lock().get(tool).map(|w| {
            let w = w.lock();
            (w.max_calls(), w.window_seconds())
        })
    }
}
