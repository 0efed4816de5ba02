//! Runs scripted operators against a live server and writes metrics.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use stocktake_core::monitor::discrepancies_csv;
use stocktake_sim::{metrics_csv, run_count, SimConfig, Warehouse};

#[derive(Parser)]
#[command(about = "Count a generated warehouse through a stocktake server")]
struct Args {
    /// Base URL, e.g. http://127.0.0.1:8080
    #[arg(long)]
    server: String,
    #[arg(long)]
    config: PathBuf,
    /// Metrics CSV; the discrepancy report is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let cfg = SimConfig::load(&args.config)?;
    let warehouse = Warehouse::load(&cfg.warehouse_dir)
        .with_context(|| format!("loading warehouse from {}", cfg.warehouse_dir.display()))?;
    let report = run_count(&args.server, &cfg, &warehouse).await?;

    std::fs::write(&args.out, metrics_csv(&report))?;
    let disc_path = args.out.with_extension("discrepancies.csv");
    std::fs::write(&disc_path, discrepancies_csv(&report.discrepancies))?;

    let diff = warehouse.expected().diff(&report.discrepancies);
    println!("session {}", report.session_id);
    println!(
        "{} bins, {} scans, makespan {} s simulated, {:.1} s wall, {} ms engine time",
        report.bins.len(),
        report.operators.iter().map(|o| o.scans).sum::<usize>(),
        report.makespan_secs,
        report.wall.as_secs_f64(),
        report.engine_micros / 1000
    );
    println!(
        "{} surplus and {} shortage units reported; matches ground truth: {}",
        report.discrepancies.surplus_units.len(),
        report.discrepancies.shortage_units.len(),
        diff.is_exact()
    );
    if !diff.is_exact() {
        anyhow::bail!("report differs from ground truth: {diff:?}");
    }
    Ok(())
}
