//! Wires a gatekeeper, a downstream child process, the control API and the
//! terminal prompt around one stdio session.

use std::path::PathBuf;
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use agentwall_core::action::SessionContext;
use agentwall_core::clock::{Clock, SystemClock};
use agentwall_core::pipeline::{open_gatekeeper, StartupError};
use agentwall_core::policy::PolicyEnv;
use chrono::{DateTime, Utc};
use rand::Rng;
use tokio::process::Command;

use crate::control::{self, ControlError};
use crate::session::{run_session, SessionEnd, SessionOptions};
use crate::{token, tty};

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub downstream: Vec<String>,
    pub policy_path: PathBuf,
    pub workspace: PathBuf,
    pub session_dir: PathBuf,
    pub home: String,
    /// `None` disables the control API.
    pub control_port: Option<u16>,
    pub token_path: PathBuf,
    /// Prompt on the controlling terminal when one exists.
    pub tty_prompt: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ProxyError {
    #[error("no downstream command given")]
    NoCommand,
    #[error(transparent)]
    Startup(#[from] StartupError),
    #[error("cannot start downstream `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("control token {path}: {source}")]
    Token {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// `20260324T090000Z-3fa9c1`: sortable, and unique enough per host.
pub fn new_session_id(now: DateTime<Utc>) -> String {
    let suffix: u32 = rand::thread_rng().gen_range(0..0x100_0000);
    format!("{}-{suffix:06x}", now.format("%Y%m%dT%H%M%SZ"))
}

/// Runs until the session ends and returns the process exit code.
pub async fn run_proxy(cfg: ProxyConfig) -> Result<i32, ProxyError> {
    let (program, args) = cfg.downstream.split_first().ok_or(ProxyError::NoCommand)?;
    let label = cfg.downstream.join(" ");
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let session = SessionContext {
        session_id: new_session_id(clock.now()),
        runtime: "unknown".into(),
        home: cfg.home.clone(),
        workspace_root: cfg.workspace.display().to_string(),
    };
    let gk = Arc::new(open_gatekeeper(
        &cfg.policy_path,
        PolicyEnv::new(cfg.home.clone()),
        &cfg.session_dir,
        clock,
        session,
    )?);

    let control = match cfg.control_port {
        Some(port) => {
            let secret =
                token::load_or_create(&cfg.token_path).map_err(|source| ProxyError::Token {
                    path: cfg.token_path.clone(),
                    source,
                })?;
            let server = control::serve(Arc::clone(&gk), port, secret).await?;
            tracing::info!(addr = %server.addr(), "control API listening");
            Some(server)
        }
        None => None,
    };

    let mut child = Command::new(program)
        .args(args)
        .current_dir(&cfg.workspace)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .kill_on_drop(true)
        .spawn()
        .map_err(|source| ProxyError::Spawn {
            command: label.clone(),
            source,
        })?;
    let child_in = child.stdin.take().expect("stdin is piped");
    let child_out = child.stdout.take().expect("stdout is piped");

    let sweeper = gk.spawn_sweeper(Duration::from_millis(250));
    let prompter = if cfg.tty_prompt {
        tty::spawn_prompter(Arc::clone(&gk))
    } else {
        None
    };
    tracing::info!(session = %gk.session_id(), downstream = %label, "proxy session started");

    let end = run_session(
        Arc::clone(&gk),
        tokio::io::stdin(),
        tokio::io::stdout(),
        child_out,
        child_in,
        SessionOptions {
            downstream_label: label,
            ..SessionOptions::default()
        },
    )
    .await;

    let status = match tokio::time::timeout(Duration::from_secs(2), child.wait()).await {
        Ok(Ok(status)) => Some(status),
        _ => {
            let _ = child.kill().await;
            None
        }
    };
    sweeper.abort();
    if let Some(p) = prompter {
        p.abort();
    }
    if let Some(server) = control {
        server.shutdown().await;
    }
    Ok(match end {
        SessionEnd::ClientClosed => 0,
        SessionEnd::DownstreamClosed => match status.and_then(|s| s.code()) {
            Some(0) | None => 1,
            Some(code) => code,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn session_ids_sort_by_time() {
        let a = new_session_id("2026-03-24T09:00:00Z".parse().unwrap());
        let b = new_session_id("2026-03-24T09:00:01Z".parse().unwrap());
        assert!(a.starts_with("20260324T090000Z-"));
        assert_eq!(a.len(), "20260324T090000Z-".len() + 6);
        assert!(a < b);
    }
}
