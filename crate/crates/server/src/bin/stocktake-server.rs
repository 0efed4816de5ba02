use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use stocktake_core::Config;
use stocktake_server::{open_engine, serve, AppState, ServerConfig};
use tracing::{info, warn};

/// Stocktaking server: ingests scans from operator terminals and serves the
/// monitoring and planning API.
#[derive(Debug, Parser)]
struct Args {
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Lines of `token,operator_id,role`.
    #[arg(long)]
    credentials: PathBuf,
    #[arg(long)]
    primary_log_dir: PathBuf,
    #[arg(long)]
    mirror_log_dir: PathBuf,
    /// `key = value` file with cost model, thresholds, idle threshold, fsync.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::default(),
    };
    let cfg = ServerConfig {
        credentials: args.credentials,
        primary_log_dir: args.primary_log_dir,
        mirror_log_dir: args.mirror_log_dir,
        config,
    };
    let (engine, report) = open_engine(&cfg)?;
    if !report.is_clean() {
        warn!(?report, "log recovery repaired the store");
    }
    info!(entries = report.entries, "log replayed");

    let listener = tokio::net::TcpListener::bind(args.listen).await?;
    info!(addr = %listener.local_addr()?, "listening");
    serve(listener, AppState::new(engine, cfg.config)).await?;
    Ok(())
}
