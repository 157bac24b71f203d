//! A stand-in MCP tool server for tests and the benchmark. It answers every
//! `tools/call` with "ok" and, with `--record`, logs each call it received.

use std::path::PathBuf;

use clap::Parser;

#[derive(Parser)]
#[command(version, about = "Mock MCP tool server speaking JSON-RPC over stdio")]
struct Args {
    /// Append one JSON line per received tools/call to this file.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[tokio::main(flavor = "current_thread")]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    agentwall_proxy::mock::serve_mock(tokio::io::stdin(), tokio::io::stdout(), args.record).await?;
    Ok(())
}
