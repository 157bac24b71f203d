use std::io::Write;
use std::path::{Path, PathBuf};

use agentwall_cli::bench::{self, BenchConfig, BenchMode};
use agentwall_cli::paths::{self, Layout};
use agentwall_core::audit::{list_sessions, read_events, render_table, verify_chain, ReplayFilter};
use agentwall_core::policy::{
    PolicyDocument, PolicyEnv, PolicyError, Verdict, DEFAULT_POLICY_YAML,
};
use agentwall_proxy::control::DEFAULT_PORT;
use agentwall_proxy::{run_proxy, token, ProxyConfig};
use anyhow::{bail, Context};
use chrono::{DateTime, NaiveDate, Utc};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "agentwall",
    version,
    about = "Policy firewall for MCP tool calls",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a downstream MCP server behind the policy gate.
    Proxy(ProxyArgs),
    /// Show recorded decisions and check the hash chain.
    Replay(ReplayArgs),
    /// Policy file tools.
    Policy {
        #[command(subcommand)]
        command: PolicyCommand,
    },
    /// Approve or reject a pending request in a running proxy.
    Approve(ApproveArgs),
    /// List pending approval requests in a running proxy.
    Pending(PendingArgs),
    /// Run the 14-case enforcement benchmark.
    Bench(BenchArgs),
    /// Create the default policy, control token and session directory.
    Init,
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Parse a policy and report every violation.
    Validate {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct ProxyArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Workspace root; defaults to the current directory.
    #[arg(long)]
    workspace: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    control_port: u16,
    /// Do not start the control API.
    #[arg(long)]
    no_control: bool,
    /// Never prompt on the controlling terminal.
    #[arg(long)]
    no_tty: bool,
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// Downstream server command and arguments.
    #[arg(last = true, required = true)]
    command: Vec<String>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    session: Option<String>,
    /// Only the log file for this UTC day.
    #[arg(long)]
    date: Option<NaiveDate>,
    #[arg(long, value_parser = parse_verdict)]
    decision: Option<Verdict>,
    #[arg(long)]
    tool: Option<String>,
    /// RFC 3339 lower bound, inclusive.
    #[arg(long)]
    since: Option<DateTime<Utc>>,
    /// RFC 3339 upper bound, inclusive.
    #[arg(long)]
    until: Option<DateTime<Utc>>,
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// List sessions instead of events.
    #[arg(long)]
    list: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ApproveArgs {
    id: String,
    #[arg(long)]
    reject: bool,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
}

#[derive(Args)]
struct PendingArgs {
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Send every call through the stdio proxy to the mock server.
    #[arg(long)]
    through_proxy: bool,
    /// Use whole-token matching for the root-deletion rule.
    #[arg(long)]
    exact_path: bool,
    /// Write the JSON report here (`-` for stdout).
    #[arg(long, value_name = "OUT")]
    json: Option<PathBuf>,
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// Mock server binary; defaults to the one next to this executable.
    #[arg(long)]
    mock_server: Option<PathBuf>,
}

fn parse_verdict(s: &str) -> Result<Verdict, String> {
    Verdict::parse(s).ok_or_else(|| format!("expected ALLOW, DENY or ASK, got `{s}`"))
}

fn main() {
    let cli = Cli::parse();
    let default_level = if matches!(cli.command, Command::Proxy(_)) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AGENTWALL_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(default_level)),
        )
        .init();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime");
    let code = match runtime.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("agentwall: {e:#}");
            1
        }
    };
    // stdin readers may still be parked on a blocking thread; do not wait for them
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}

async fn dispatch(command: Command) -> anyhow::Result<i32> {
    let layout = Layout::from_env();
    match command {
        Command::Proxy(args) => proxy(&layout, args).await,
        Command::Replay(args) => replay(&layout, args),
        Command::Policy {
            command: PolicyCommand::Validate { policy, json },
        } => validate(&layout.resolve_policy(policy.as_deref()), json),
        Command::Approve(args) => approve(&layout, args).await,
        Command::Pending(args) => pending(&layout, args).await,
        Command::Bench(args) => run_bench(&layout, args).await,
        Command::Init => init(&layout),
    }
}

async fn proxy(layout: &Layout, args: ProxyArgs) -> anyhow::Result<i32> {
    let workspace = match args.workspace {
        Some(w) => w,
        None => std::env::current_dir()?,
    };
    let workspace = std::fs::canonicalize(&workspace)
        .with_context(|| format!("workspace {}", workspace.display()))?;
    let cfg = ProxyConfig {
        downstream: args.command,
        policy_path: layout.resolve_policy(args.policy.as_deref()),
        workspace,
        session_dir: args.session_dir.unwrap_or_else(|| layout.sessions()),
        home: paths::user_home().display().to_string(),
        control_port: (!args.no_control).then_some(args.control_port),
        token_path: layout.token(),
        tty_prompt: !args.no_tty,
    };
    Ok(run_proxy(cfg).await?)
}

fn session_files(dir: &Path, date: Option<NaiveDate>) -> anyhow::Result<Vec<PathBuf>> {
    if let Some(d) = date {
        let f = dir.join(agentwall_core::audit::session_file_name(d));
        return Ok(if f.is_file() { vec![f] } else { Vec::new() });
    }
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
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(e).with_context(|| format!("cannot list {}", dir.display())),
    };
    files.sort();
    Ok(files)
}

fn replay(layout: &Layout, args: ReplayArgs) -> anyhow::Result<i32> {
    let dir = args.session_dir.unwrap_or_else(|| layout.sessions());
    if args.list {
        let sessions = list_sessions(&dir)?;
        if args.json {
            println!("{}", serde_json::to_string_pretty(&sessions)?);
        } else if sessions.is_empty() {
            println!("no sessions in {}", dir.display());
        } else {
            for s in sessions {
                println!(
                    "{}  {} events  {} .. {}  ({})",
                    s.session_id,
                    s.events,
                    s.first_ts,
                    s.last_ts,
                    s.file.display()
                );
            }
        }
        return Ok(0);
    }

    let filter = ReplayFilter {
        session_id: args.session,
        decision: args.decision,
        tool: args.tool,
        since: args.since,
        until: args.until,
    };
    let mut events = Vec::new();
    let mut chains = Vec::new();
    let mut broken = false;
    for file in session_files(&dir, args.date)? {
        let read = read_events(&file).with_context(|| format!("cannot read {}", file.display()))?;
        let chain = verify_chain(&file)?;
        broken |= !chain.is_ok();
        chains.push((file, chain));
        events.extend(read.events.into_iter().filter(|e| filter.matches(e)));
    }

    if args.json {
        let files: Vec<_> = chains
            .iter()
            .map(|(f, c)| json!({ "file": f, "chain": c }))
            .collect();
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({ "events": events, "files": files }))?
        );
    } else {
        if events.is_empty() {
            println!("no matching events in {}", dir.display());
        } else {
            print!("{}", render_table(&events));
            println!("{} events", events.len());
        }
        for (file, chain) in &chains {
            let name = file.file_name().unwrap_or_default().to_string_lossy();
            println!("chain {name}: {chain}");
        }
    }
    Ok(if broken { 1 } else { 0 })
}

fn validate(path: &Path, json_out: bool) -> anyhow::Result<i32> {
    let result = PolicyDocument::load(path, &PolicyEnv::from_system());
    match result {
        Ok(doc) => {
            if json_out {
                let out = json!({
                    "valid": true,
                    "path": path,
                    "rules": doc.rules.len(),
                    "rate_limits": doc.rate_limits.len(),
                    "tool_mappings": doc.tool_mappings.len(),
                    "content_hash": doc.content_hash,
                });
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                println!(
                    "{}: valid, {} rules, {} rate limits, {} tool mappings",
                    path.display(),
                    doc.rules.len(),
                    doc.rate_limits.len(),
                    doc.tool_mappings.len()
                );
            }
            Ok(0)
        }
        Err(e @ PolicyError::Io { .. }) => Err(e.into()),
        Err(e) => {
            let violations = e.violations();
            if json_out {
                let out = json!({ "valid": false, "path": path, "violations": violations });
                println!("{}", serde_json::to_string_pretty(&out)?);
            } else {
                println!(
                    "{}: invalid ({} problems)",
                    path.display(),
                    violations.len()
                );
                for v in violations {
                    println!("  - {v}");
                }
            }
            Ok(1)
        }
    }
}

fn control_client(layout: &Layout) -> anyhow::Result<(reqwest::Client, String)> {
    let path = layout.token();
    let token = std::fs::read_to_string(&path)
        .with_context(|| format!("cannot read control token {}", path.display()))?;
    Ok((reqwest::Client::new(), token.trim().to_string()))
}

async fn approve(layout: &Layout, args: ApproveArgs) -> anyhow::Result<i32> {
    let (http, token) = control_client(layout)?;
    let decision = if args.reject { "reject" } else { "approve" };
    let url = format!(
        "http://127.0.0.1:{}/v1/approvals/{}/decision",
        args.port, args.id
    );
    let resp = http
        .post(&url)
        .bearer_auth(token)
        .json(&json!({ "decision": decision }))
        .send()
        .await
        .with_context(|| format!("no proxy control API on port {}", args.port))?;
    let status = resp.status();
    let body: serde_json::Value = resp.json().await.unwrap_or_default();
    match status.as_u16() {
        200 => {
            println!("{} {}", args.id, body["state"].as_str().unwrap_or(decision));
            Ok(0)
        }
        409 => {
            println!(
                "{} already resolved: {}",
                args.id,
                body["state"].as_str().unwrap_or("unknown")
            );
            Ok(1)
        }
        404 => bail!("no approval request {}", args.id),
        401 => bail!("control API rejected the token"),
        _ => bail!("control API answered {status}: {body}"),
    }
}

async fn pending(layout: &Layout, args: PendingArgs) -> anyhow::Result<i32> {
    let (http, token) = control_client(layout)?;
    let url = format!("http://127.0.0.1:{}/v1/approvals/pending", args.port);
    let resp = http
        .get(&url)
        .bearer_auth(token)
        .send()
        .await
        .with_context(|| format!("no proxy control API on port {}", args.port))?;
    if !resp.status().is_success() {
        bail!("control API answered {}", resp.status());
    }
    let body: serde_json::Value = resp.json().await?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&body)?);
        return Ok(0);
    }
    let items = body.as_array().cloned().unwrap_or_default();
    if items.is_empty() {
        println!("no pending approvals");
    }
    for req in items {
        let action = &req["action"];
        let target = ["command", "path", "sql", "destination"]
            .iter()
            .find_map(|k| action[k].as_str())
            .unwrap_or("");
        println!(
            "{}  {} {}: {}  (since {})",
            req["id"].as_str().unwrap_or("?"),
            action["action_type"].as_str().unwrap_or("?"),
            action["tool"].as_str().unwrap_or("?"),
            target,
            req["created_at"].as_str().unwrap_or("?")
        );
    }
    Ok(0)
}

fn default_mock_server() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let candidate = exe.with_file_name(format!(
        "agentwall-mock-server{}",
        std::env::consts::EXE_SUFFIX
    ));
    candidate.is_file().then_some(candidate)
}

async fn run_bench(layout: &Layout, args: BenchArgs) -> anyhow::Result<i32> {
    let policy = layout.resolve_policy(args.policy.as_deref());
    if !policy.is_file() {
        bail!(
            "policy {} not found (run `agentwall init` or pass --policy)",
            policy.display()
        );
    }
    let work = tempfile::tempdir()?;
    let mode = if args.through_proxy {
        BenchMode::ThroughProxy
    } else {
        BenchMode::InProcess
    };
    let mock_server = args.mock_server.or_else(default_mock_server);
    if mode == BenchMode::ThroughProxy && mock_server.is_none() {
        bail!("mock server binary not found; pass --mock-server");
    }
    let cfg = BenchConfig {
        policy,
        mode,
        session_dir: args.session_dir.unwrap_or_else(|| layout.sessions()),
        work_dir: work.path().to_path_buf(),
        mock_server,
        exact_path: args.exact_path,
    };
    let report = bench::run_bench(&cfg).await?;
    let to_stdout = args.json.as_deref() == Some(Path::new("-"));
    if !to_stdout {
        print!("{}", bench::render_report(&report));
    }
    if let Some(out) = &args.json {
        let text = serde_json::to_string_pretty(&report)?;
        if to_stdout {
            println!("{text}");
        } else {
            std::fs::write(out, text + "\n")
                .with_context(|| format!("cannot write {}", out.display()))?;
        }
    }
    let ok = if cfg.exact_path {
        report.expected_passed == report.total
    } else {
        report.all_reproduced()
    };
    Ok(if ok && report.chain.is_ok() { 0 } else { 1 })
}

fn init(layout: &Layout) -> anyhow::Result<i32> {
    std::fs::create_dir_all(&layout.root)
        .with_context(|| format!("cannot create {}", layout.root.display()))?;
    let policy = layout.policy();
    if policy.exists() {
        println!("kept    {}", policy.display());
    } else {
        std::fs::write(&policy, DEFAULT_POLICY_YAML)?;
        println!("created {}", policy.display());
    }
    let token_path = layout.token();
    let existed = token_path.exists();
    token::load_or_create(&token_path)
        .with_context(|| format!("control token {}", token_path.display()))?;
    println!(
        "{} {}",
        if existed { "kept   " } else { "created" },
        token_path.display()
    );
    let sessions = layout.sessions();
    let existed = sessions.is_dir();
    std::fs::create_dir_all(&sessions)?;
    println!(
        "{} {}",
        if existed { "kept   " } else { "created" },
        sessions.display()
    );
    Ok(0)
}
