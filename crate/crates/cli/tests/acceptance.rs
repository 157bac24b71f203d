//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS or FAIL line, even on success.

use std::collections::BTreeSet;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use agentwall_cli::bench::{run_bench, BenchConfig, BenchMode, BenchReport};
use agentwall_core::action::SessionContext;
use agentwall_core::approval::ApprovalState;
use agentwall_core::audit::{read_events, verify_lines, ChainStatus, DecidedBy};
use agentwall_core::clock::ManualClock;
use agentwall_core::pipeline::{open_gatekeeper, Gatekeeper};
use agentwall_core::policy::{PolicyEnv, Verdict, DEFAULT_POLICY_YAML};
use agentwall_core::rate_limit::{RateDecision, RateWindow};
use anyhow::{ensure, Context};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Map, Value};

const MAX_RUNTIME_MS: f64 = 10_000.0;
const MAX_AVG_MS: f64 = 1.0;
const MAX_P95_MS: f64 = 2.0;
const RATE_SEQUENCES: usize = 1_000;
const RATE_MAX: usize = 30;
const RATE_WINDOW_MS: i64 = 60_000;
const TAMPER_TRIALS: usize = 100;
const BENCH_EVENTS: usize = 50;

fn mock_server() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_agentwall-mock-server"))
}

struct Scratch {
    dir: tempfile::TempDir,
}

impl Scratch {
    fn new() -> Scratch {
        let dir = tempfile::tempdir().expect("tempdir");
        std::fs::write(dir.path().join("default.yaml"), DEFAULT_POLICY_YAML).expect("write policy");
        Scratch { dir }
    }

    fn config(&self, name: &str, mode: BenchMode, exact_path: bool) -> BenchConfig {
        BenchConfig {
            policy: self.dir.path().join("default.yaml"),
            mode,
            session_dir: self.dir.path().join(name).join("sessions"),
            work_dir: self.dir.path().join(name).join("work"),
            mock_server: Some(mock_server()),
            exact_path,
        }
    }
}

async fn bench(
    s: &Scratch,
    name: &str,
    mode: BenchMode,
    exact_path: bool,
) -> anyhow::Result<BenchReport> {
    run_bench(&s.config(name, mode, exact_path)).await
}

fn verdicts(r: &BenchReport) -> Vec<String> {
    r.cases.iter().map(|c| c.actual.clone()).collect()
}

async fn table_reproduction(s: &Scratch) -> anyhow::Result<String> {
    let r = bench(s, "table", BenchMode::InProcess, false).await?;
    let published = [
        "ALLOW", "DENY", "DENY", "DENY", "DENY", "ASK", "DENY", "ASK", "ALLOW", "DENY", "ALLOW",
        "DENY", "DENY@31", "DENY",
    ];
    ensure!(verdicts(&r) == published, "verdicts {:?}", verdicts(&r));
    ensure!(r.passed == 14, "{}/14 reproduced", r.passed);
    ensure!(
        r.cases[3].rule_id.as_deref() == Some("deny-rm-rf-root"),
        "case 4 decided by {:?}",
        r.cases[3].rule_id
    );

    let rate = &r.cases[12].calls;
    ensure!(rate.len() == 35, "case 13 made {} calls", rate.len());
    ensure!(
        rate[..30].iter().all(|c| c.verdict == Verdict::Allow),
        "first 30 not all ALLOW"
    );
    ensure!(
        rate[30..]
            .iter()
            .all(|c| c.verdict == Verdict::Deny && c.decided_by == DecidedBy::RateLimit),
        "last 5 not all rate-limit DENY"
    );
    let reload = &r.cases[13];
    ensure!(reload.reload_detected, "case 14 reload not detected");
    ensure!(
        reload.rule_id.as_deref() == Some("deny-exfil-domain"),
        "case 14 rule {:?}",
        reload.rule_id
    );
    ensure!(r.elapsed_ms < MAX_RUNTIME_MS, "took {:.0} ms", r.elapsed_ms);
    Ok(format!(
        "14/14 match, accuracy vs expected {:.1}%, {:.0} ms",
        r.expected_accuracy_percent, r.elapsed_ms
    ))
}

async fn exact_path_variant(s: &Scratch) -> anyhow::Result<String> {
    let r = bench(s, "exact", BenchMode::InProcess, true).await?;
    ensure!(r.cases[3].actual == "ASK", "case 4 = {}", r.cases[3].actual);
    ensure!(
        r.cases[3].rule_id.as_deref() == Some("ask-rm-rf"),
        "case 4 rule {:?}",
        r.cases[3].rule_id
    );
    ensure!(
        r.expected_passed == 14,
        "{}/14 match expected",
        r.expected_passed
    );
    Ok("case 4 = ASK, 14/14 match the expected column".into())
}

async fn latency(s: &Scratch) -> anyhow::Result<String> {
    let r = bench(s, "latency", BenchMode::InProcess, false).await?;
    let l = r.latency.context("no latency samples")?;
    ensure!(l.evaluations == 43, "{} evaluations", l.evaluations);
    ensure!(l.avg_ms < MAX_AVG_MS, "avg {:.4} ms", l.avg_ms);
    ensure!(l.p95_ms < MAX_P95_MS, "p95 {:.4} ms", l.p95_ms);
    Ok(format!(
        "{} evaluations, avg {:.4} ms (< {MAX_AVG_MS}), p95 {:.4} ms (< {MAX_P95_MS})",
        l.evaluations, l.avg_ms, l.p95_ms
    ))
}

/// Brute force: a call is allowed when fewer than `max` allowed calls lie in
/// (t - w, t].
fn oracle_rate(ts: &[i64], max: usize, w: i64) -> Vec<bool> {
    let mut allowed: Vec<i64> = Vec::new();
    ts.iter()
        .map(|&t| {
            let ok = allowed.iter().filter(|&&a| a > t - w && a <= t).count() < max;
            if ok {
                allowed.push(t);
            }
            ok
        })
        .collect()
}

fn random_timeline(rng: &mut StdRng) -> Vec<i64> {
    let n = rng.gen_range(1..150);
    let mut t = rng.gen_range(0..1_000_000i64);
    (0..n)
        .map(|_| {
            t += match rng.gen_range(0..4) {
                0 => 0,
                1 => rng.gen_range(0..500),
                2 => rng.gen_range(0..5_000),
                _ => rng.gen_range(50_000..70_000),
            };
            t
        })
        .collect()
}

fn rate_oracle() -> anyhow::Result<String> {
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut calls = 0;
    for i in 0..RATE_SEQUENCES {
        let ts = random_timeline(&mut rng);
        let mut w = RateWindow::new("exec", RATE_MAX as u32, (RATE_WINDOW_MS / 1000) as u64);
        let got: Vec<bool> = ts
            .iter()
            .map(|&t| w.check_and_consume(t) == RateDecision::Allowed)
            .collect();
        ensure!(
            got == oracle_rate(&ts, RATE_MAX, RATE_WINDOW_MS),
            "sequence {i} differs from oracle"
        );
        let allowed: Vec<i64> = ts
            .iter()
            .zip(&got)
            .filter(|(_, ok)| **ok)
            .map(|(t, _)| *t)
            .collect();
        // every window (s - w, s] worth checking ends at an allowed call
        for &end in &allowed {
            let inside = allowed
                .iter()
                .filter(|&&a| a > end - RATE_WINDOW_MS && a <= end)
                .count();
            ensure!(
                inside <= RATE_MAX,
                "sequence {i}: {inside} allowed in window ending {end}"
            );
        }
        calls += ts.len();
    }
    Ok(format!(
        "{RATE_SEQUENCES} sequences, {calls} calls, matches oracle, <= {RATE_MAX} per 60 s"
    ))
}

/// Sequence number of the line holding byte `pos`; a newline belongs to the
/// line it ends.
fn line_of(bytes: &[u8], pos: usize) -> u64 {
    bytes[..pos].iter().filter(|b| **b == b'\n').count() as u64 + 1
}

async fn audit_integrity(s: &Scratch) -> anyhow::Result<String> {
    let r = bench(s, "audit", BenchMode::InProcess, false).await?;
    let bytes = std::fs::read(&r.log_path)?;
    let events = read_events(&r.log_path)?.events;
    ensure!(
        events.len() == BENCH_EVENTS,
        "{} events in log",
        events.len()
    );
    ensure!(
        events.iter().all(|e| e.decision.is_some()),
        "log holds non-decision events"
    );
    ensure!(
        r.events.decisions == BENCH_EVENTS,
        "report counts {}",
        r.events.decisions
    );
    ensure!(
        verify_lines(&bytes)
            == ChainStatus::Ok {
                events: BENCH_EVENTS as u64
            },
        "clean log does not verify"
    );
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    for trial in 0..TAMPER_TRIALS {
        let pos = rng.gen_range(0..bytes.len());
        let mut tampered = bytes.clone();
        let flip = rng.gen_range(1..=255u8);
        tampered[pos] ^= flip;
        let want = line_of(&bytes, pos);
        match verify_lines(&tampered) {
            ChainStatus::Corrupt { seq, .. } if seq == want => {}
            other => {
                anyhow::bail!("trial {trial}: byte {pos} ^ {flip:#04x} (line {want}) gave {other}")
            }
        }
    }
    Ok(format!(
        "{BENCH_EVENTS} events, chain OK, {TAMPER_TRIALS}/{TAMPER_TRIALS} tampers located"
    ))
}

async fn interposition(s: &Scratch) -> anyhow::Result<String> {
    let direct = bench(s, "direct", BenchMode::InProcess, false).await?;
    let r = bench(s, "proxied", BenchMode::ThroughProxy, false).await?;
    ensure!(
        verdicts(&r) == verdicts(&direct),
        "proxied verdicts differ from in-process"
    );

    // request ids are 1.. in call order; so are the non-approval events
    let events = read_events(&r.log_path)?.events;
    let mut expected = BTreeSet::new();
    let mut blocked = BTreeSet::new();
    let mut call = 0u64;
    for (i, e) in events.iter().enumerate() {
        if e.decided_by == DecidedBy::Approval {
            continue;
        }
        call += 1;
        let through = match e.decision {
            Some(Verdict::Allow) => true,
            Some(Verdict::Ask) => events[i + 1..]
                .iter()
                .find(|o| o.decided_by == DecidedBy::Approval && o.action_id == e.action_id)
                .is_some_and(|o| o.decision == Some(Verdict::Allow)),
            _ => false,
        };
        if through {
            expected.insert(call);
        } else {
            blocked.insert(call);
        }
    }
    let record = r.mock_record.clone().context("no mock record")?;
    let received: Vec<u64> = std::fs::read_to_string(&record)?
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).map(|v| v["id"].as_u64().unwrap_or(0)))
        .collect::<Result<_, _>>()?;
    let received_set: BTreeSet<u64> = received.iter().copied().collect();
    ensure!(
        received.len() == received_set.len(),
        "mock saw a call twice"
    );
    ensure!(
        received_set == expected,
        "mock saw {received_set:?}, audit allows {expected:?}"
    );
    ensure!(
        received_set.is_disjoint(&blocked),
        "a blocked call reached the mock"
    );
    Ok(format!(
        "mock received {} calls = allowed/approved set; {} blocked never arrived",
        received.len(),
        blocked.len()
    ))
}

struct Fixture {
    _dir: tempfile::TempDir,
    policy: PathBuf,
    log: PathBuf,
    clock: ManualClock,
    gk: Arc<Gatekeeper>,
}

fn fixture(yaml: &str) -> anyhow::Result<Fixture> {
    let dir = tempfile::tempdir()?;
    let policy = dir.path().join("policy.yaml");
    std::fs::write(&policy, yaml)?;
    let clock = ManualClock::new("2026-03-24T09:00:00Z".parse()?);
    let gk = Arc::new(open_gatekeeper(
        &policy,
        PolicyEnv::new("/home/dev"),
        &dir.path().join("sessions"),
        Arc::new(clock.clone()),
        SessionContext {
            session_id: "acceptance".into(),
            runtime: "acceptance".into(),
            home: "/home/dev".into(),
            workspace_root: "/home/dev/proj".into(),
        },
    )?);
    Ok(Fixture {
        log: dir.path().join("sessions/session-2026-03-24.jsonl"),
        _dir: dir,
        policy,
        clock,
        gk,
    })
}

fn args(v: Value) -> Map<String, Value> {
    v.as_object().cloned().unwrap_or_default()
}

/// Calls that never escalate, so they evaluate without an approver.
fn probes() -> Vec<(&'static str, Value)> {
    vec![
        ("read_file", json!({"path": "README.md"})),
        ("read_file", json!({"path": "~/.ssh/id_rsa"})),
        ("exec", json!({"command": "ls -la"})),
        ("exec", json!({"command": "eval $(id)"})),
        ("query", json!({"sql": "SELECT 1"})),
        ("query", json!({"sql": "DROP TABLE t"})),
        ("write_file", json!({"path": "~/.zshrc"})),
    ]
}

async fn probe_verdicts(gk: &Gatekeeper) -> Vec<Verdict> {
    let mut out = Vec::new();
    for (tool, a) in probes() {
        out.push(gk.handle_call(tool, args(a)).await.record().verdict);
    }
    out
}

async fn hot_reload() -> anyhow::Result<String> {
    let f = fixture(DEFAULT_POLICY_YAML)?;
    let before = probe_verdicts(&f.gk).await;

    std::fs::write(&f.policy, "rules: [this is: not valid")?;
    let during = probe_verdicts(&f.gk).await;
    ensure!(
        during == before,
        "invalid file changed verdicts: {before:?} -> {during:?}"
    );
    let warnings = read_events(&f.log)?
        .events
        .iter()
        .filter(|e| e.decided_by == DecidedBy::Warning)
        .count();
    ensure!(warnings == 1, "{warnings} warning events for one bad file");

    let mut doc: serde_yaml::Value = serde_yaml::from_str(DEFAULT_POLICY_YAML)?;
    let rules = doc["rules"].as_sequence_mut().context("rules")?;
    rules.insert(
        0,
        serde_yaml::from_str(
            "{id: deny-ls, action: EXECUTE, command_pattern: \"ls *\", decision: DENY}",
        )?,
    );
    std::fs::write(&f.policy, serde_yaml::to_string(&doc)?)?;
    let next =
        f.gk.handle_call("exec", args(json!({"command": "ls -la"})))
            .await;
    let rec = next.record();
    ensure!(
        rec.verdict == Verdict::Deny,
        "next ls -la = {}",
        rec.verdict
    );
    ensure!(
        rec.rule_id.as_deref() == Some("deny-ls"),
        "rule {:?}",
        rec.rule_id
    );
    ensure!(rec.reload_detected, "reload not flagged");
    Ok(format!(
        "invalid file: {} probes unchanged, 1 warning; valid file applied on the next call",
        before.len()
    ))
}

async fn fail_closed() -> anyhow::Result<String> {
    let yaml = DEFAULT_POLICY_YAML.replace(
        "approval_timeout_seconds: 120",
        "approval_timeout_seconds: 5",
    );
    ensure!(yaml != DEFAULT_POLICY_YAML, "default timeout not found");
    let f = fixture(&yaml)?;
    let _sweeper = f.gk.spawn_sweeper(Duration::from_millis(5));

    // nobody answers: each escalation must end as a timeout, never a forward
    let escalate = |tool: &'static str, a: Value| {
        let gk = Arc::clone(&f.gk);
        let clock = f.clock.clone();
        async move {
            let call = tokio::spawn({
                let gk = Arc::clone(&gk);
                async move { gk.handle_call(tool, args(a)).await }
            });
            while gk.broker().list_pending().is_empty() {
                if call.is_finished() {
                    break;
                }
                tokio::time::sleep(Duration::from_millis(1)).await;
            }
            clock.advance_millis(5_000);
            call.await.expect("call task")
        }
    };

    let unknown = escalate("mystery_tool", json!({"x": 1})).await;
    let rec = unknown.record();
    ensure!(
        rec.verdict == Verdict::Ask,
        "unknown tool = {}",
        rec.verdict
    );
    ensure!(!unknown.is_forward(), "unknown tool was forwarded");
    ensure!(
        rec.approval.as_ref().map(|a| a.state) == Some(ApprovalState::TimedOut),
        "unknown tool approval {:?}",
        rec.approval.as_ref().map(|a| a.state)
    );

    let timeout = escalate("exec", json!({"command": "sudo reboot"})).await;
    ensure!(!timeout.is_forward(), "timed-out approval was forwarded");
    let last = read_events(&f.log)?.events.pop().context("no events")?;
    ensure!(
        last.decision == Some(Verdict::Deny),
        "timeout recorded as {:?}",
        last.decision
    );
    ensure!(
        last.note
            .as_deref()
            .is_some_and(|n| n.starts_with("approval-timeout")),
        "timeout note {:?}",
        last.note
    );

    let nomatch = escalate("fetch", json!({"url": "https://example.org/"})).await;
    let rec = nomatch.record();
    ensure!(
        rec.verdict == Verdict::Ask && rec.rule_id.is_none(),
        "no-match = {} by {:?}",
        rec.verdict,
        rec.rule_id
    );
    ensure!(!nomatch.is_forward(), "no-match was forwarded");
    Ok("unknown tool -> ASK, timeout -> DENY, no rule -> default ASK".into())
}

async fn check<F: Future<Output = anyhow::Result<String>>>(
    name: &str,
    f: F,
    failures: &mut Vec<String>,
) {
    match f.await {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(e) => {
            println!("FAIL {name}: {e:#}");
            failures.push(name.to_string());
        }
    }
}

fn main() {
    // `cargo test -- --list` and filters are not meaningful here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime");
    let failures = rt.block_on(async {
        let s = Scratch::new();
        let mut failures = Vec::new();
        check("table reproduction", table_reproduction(&s), &mut failures).await;
        check("exact-path variant", exact_path_variant(&s), &mut failures).await;
        check("evaluation latency", latency(&s), &mut failures).await;
        check("rate-limit oracle", async { rate_oracle() }, &mut failures).await;
        check("audit integrity", audit_integrity(&s), &mut failures).await;
        check(
            "interposition completeness",
            interposition(&s),
            &mut failures,
        )
        .await;
        check("hot-reload safety", hot_reload(), &mut failures).await;
        check("fail-closed", fail_closed(), &mut failures).await;
        failures
    });
    if !failures.is_empty() {
        eprintln!(
            "{} acceptance criteria failed: {}",
            failures.len(),
            failures.join(", ")
        );
        std::process::exit(1);
    }
}
