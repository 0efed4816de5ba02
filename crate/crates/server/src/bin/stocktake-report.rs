use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, ValueEnum};
use stocktake_core::archive::reconciliation_table;
use stocktake_core::monitor;
use stocktake_core::optimizer::{build_route_plan, profiles_from_reference, route_plan_csv};
use stocktake_core::session::replay;
use stocktake_core::store::read_log_dir;
use stocktake_core::Config;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Report {
    Progress,
    Discrepancies,
    Activity,
    IdleGaps,
    Durations,
    Stats,
    Reconciliation,
    RoutePlan,
}

/// Exports monitoring reports as CSV from a log directory. The log is only
/// read, so this is safe to run next to a live server.
#[derive(Debug, Parser)]
struct Args {
    /// Directory holding `events.log` (the server's primary or mirror dir).
    #[arg(long)]
    log_dir: PathBuf,
    #[arg(long, value_enum)]
    report: Report,
    /// Session id; defaults to the most recent session.
    #[arg(long)]
    session: Option<String>,
    /// Operators for the route plan.
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    idle_threshold: Option<i64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let config = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let entries = read_log_dir(&args.log_dir).with_context(|| format!("reading {}", args.log_dir.display()))?;
    let state = replay(&entries)?;
    let session = match &args.session {
        Some(id) => state.session(id)?,
        None => match state.sessions().values().max_by_key(|s| s.created_seq) {
            Some(s) => s,
            None => bail!("the log holds no sessions"),
        },
    };

    let csv = match args.report {
        Report::Progress => monitor::progress_csv(&monitor::progress(session)),
        Report::Discrepancies => monitor::discrepancies_csv(&monitor::discrepancies(session)),
        Report::Activity => monitor::activity_csv(&monitor::activity(
            session,
            args.idle_threshold.unwrap_or(config.idle_threshold_secs),
        )),
        Report::IdleGaps => monitor::idle_gaps_csv(&monitor::activity(
            session,
            args.idle_threshold.unwrap_or(config.idle_threshold_secs),
        )),
        Report::Durations => monitor::durations_csv(&monitor::bin_durations(session)),
        Report::Stats => {
            let secs: Vec<f64> = monitor::bin_durations(session)
                .iter()
                .map(|d| d.seconds as f64)
                .collect();
            let s = monitor::completion_stats(&secs)?;
            format!("bins,mean,median,sd\n{},{},{},{}\n", secs.len(), s.mean, s.median, s.sd)
        }
        Report::Reconciliation => reconciliation_table(session),
        Report::RoutePlan => {
            if args.k == 0 {
                bail!("--k must be at least 1");
            }
            let profiles = profiles_from_reference(&session.reference);
            route_plan_csv(&build_route_plan(&profiles, args.k, &config.cost, &config.thresholds))
        }
    };
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
