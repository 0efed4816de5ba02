//! Writes a synthetic warehouse: `reference.csv` and `ground_truth.csv`.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use stocktake_sim::{generate_warehouse, SimConfig, UnitStatus};

#[derive(Parser)]
#[command(about = "Generate a seeded warehouse and its ground truth")]
struct Args {
    #[arg(long, default_value_t = 500)]
    bins: usize,
    #[arg(long, default_value_t = 1000)]
    batches: usize,
    #[arg(long, default_value_t = 37_000)]
    handling_units: usize,
    #[arg(long, default_value_t = 0.0)]
    misplace_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    skip_rate: f64,
    /// Log-normal spread of units per bin.
    #[arg(long, default_value_t = 0.8)]
    hu_sigma: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let cfg = SimConfig {
        bins: args.bins,
        batches: args.batches,
        handling_units: args.handling_units,
        misplace_rate: args.misplace_rate,
        skip_rate: args.skip_rate,
        hu_sigma: args.hu_sigma,
        seed: args.seed,
        ..SimConfig::default()
    };
    let warehouse = generate_warehouse(&cfg)?;
    warehouse
        .write(&args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} units ({} misplaced, {} lost) to {}",
        warehouse.rows.len(),
        warehouse.count(UnitStatus::Misplaced),
        warehouse.count(UnitStatus::Lost),
        args.out.display()
    );
    Ok(())
}
