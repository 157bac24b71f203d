//! Approval prompt on the controlling terminal.
//!
//! The proxy's stdin and stdout belong to the MCP client, so the prompt goes
//! through `/dev/tty` directly.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::sync::Arc;

use agentwall_core::approval::{
    ApprovalDecision, ApprovalError, ApprovalRequest, ApprovalState, DecidedVia,
};
use agentwall_core::frames::FrameKind;
use agentwall_core::pipeline::Gatekeeper;
use tokio::task::JoinHandle;

pub fn prompt_text(req: &ApprovalRequest) -> String {
    format!(
        "agentwall: approval needed [{}] {}\n[a]pprove / [r]eject? ",
        req.id,
        req.summary()
    )
}

/// Maps an answer line to a decision; anything unrecognized asks again.
pub fn parse_answer(line: &str) -> Option<ApprovalDecision> {
    match line.trim().to_ascii_lowercase().as_str() {
        "a" | "approve" | "y" | "yes" => Some(ApprovalDecision::Approve),
        "r" | "reject" | "n" | "no" => Some(ApprovalDecision::Reject),
        _ => None,
    }
}

/// Asks on `tty` until a valid answer arrives. `None` on end of input.
fn ask<R: BufRead, W: Write>(
    input: &mut R,
    out: &mut W,
    req: &ApprovalRequest,
) -> io::Result<Option<ApprovalDecision>> {
    loop {
        out.write_all(prompt_text(req).as_bytes())?;
        out.flush()?;
        let mut line = String::new();
        if input.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        if let Some(d) = parse_answer(&line) {
            return Ok(Some(d));
        }
    }
}

/// Starts prompting for each new approval request, one at a time. Returns
/// `None` when there is no controlling terminal.
pub fn spawn_prompter(gk: Arc<Gatekeeper>) -> Option<JoinHandle<()>> {
    let tty = OpenOptions::new()
        .read(true)
        .write(true)
        .open("/dev/tty")
        .ok()?;
    let (_, mut rx) = gk.bus().subscribe();
    Some(tokio::spawn(async move {
        let mut reader: Option<BufReader<File>> = tty.try_clone().ok().map(BufReader::new);
        let mut writer = tty;
        loop {
            let frame = match rx.recv().await {
                Ok(f) => f,
                Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(_) => return,
            };
            if frame.kind != FrameKind::ApprovalPending {
                continue;
            }
            let Ok(req) = serde_json::from_value::<ApprovalRequest>(frame.payload) else {
                continue;
            };
            if gk.broker().get(&req.id).map(|r| r.state) != Some(ApprovalState::Pending) {
                continue;
            }
            let Some(mut input) = reader.take() else {
                return;
            };
            let (back, answer) = tokio::task::spawn_blocking(move || {
                let answer = ask(&mut input, &mut writer, &req);
                (input, (writer, req, answer))
            })
            .await
            .expect("prompt task does not panic");
            reader = Some(back);
            let (w, req, answer) = answer;
            writer = w;
            let decision = match answer {
                Ok(Some(d)) => d,
                Ok(None) | Err(_) => return,
            };
            let note =
                match gk
                    .broker()
                    .decide(&req.id, decision, DecidedVia::Tty, gk.clock().now())
                {
                    Ok(done) => format!("agentwall: {} {}\n", req.id, done.state),
                    Err(ApprovalError::Conflict { state, .. }) => {
                        format!(
                            "agentwall: {} was already resolved elsewhere ({state})\n",
                            req.id
                        )
                    }
                    Err(e) => format!("agentwall: {e}\n"),
                };
            let _ = writer.write_all(note.as_bytes());
        }
    }))
}
