//! Scripted operators counting a warehouse through the HTTP API.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::{Method, StatusCode};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stocktake_core::inventory::format_qr;
use stocktake_core::monitor::{ActivityTimeline, DiscrepancyReport};
use stocktake_core::optimizer::RoutePlan;
use stocktake_core::HandlingUnitRef;
use thiserror::Error;
use tokio::task::JoinSet;

use crate::config::SimConfig;
use crate::timing::{routes_from_plan, BinVisit, Clock};
use crate::warehouse::Warehouse;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("bin {bin} stalled: {reason}")]
    StalledBin { bin: String, reason: String },
    #[error("server unreachable at {url}: {reason}")]
    ServerUnreachable { url: String, reason: String },
    #[error("{what} failed with {status}: {body}")]
    Rejected { what: String, status: u16, body: Value },
    #[error("driver misconfigured: {0}")]
    Config(String),
}

/// A pause inserted after a bin, longer than normal scanning gaps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeededPause {
    pub operator_id: String,
    pub start: i64,
    pub seconds: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinMetric {
    pub operator_id: String,
    pub bin_code: String,
    pub started_at: i64,
    pub finished_at: i64,
    pub scans: usize,
    pub duplicates_sent: usize,
    pub surplus_acks: usize,
    pub signoff_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorMetric {
    pub operator_id: String,
    pub bins: usize,
    pub started_at: i64,
    pub finished_at: i64,
    pub scans: usize,
    pub duplicates_sent: usize,
    pub surplus_acks: usize,
    pub signoff_attempts: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub session_id: String,
    pub bins: Vec<BinMetric>,
    pub operators: Vec<OperatorMetric>,
    pub pauses: Vec<SeededPause>,
    pub discrepancies: DiscrepancyReport,
    pub activity: ActivityTimeline,
    /// Simulated seconds from the first start to the last sign-off.
    pub makespan_secs: i64,
    /// Server time spent holding the engine during the run.
    pub engine_micros: u64,
    pub requests: u64,
    pub wall: Duration,
}

/// Thin client for one terminal token, retrying transport failures.
#[derive(Clone)]
struct Terminal {
    http: reqwest::Client,
    base: Arc<str>,
    token: Arc<str>,
    retries: u32,
}

struct Reply {
    status: StatusCode,
    body: Value,
}

impl Reply {
    fn code(&self) -> &str {
        self.body.get("error").and_then(Value::as_str).unwrap_or("")
    }
}

impl Terminal {
    async fn send(&self, method: Method, path: &str, body: Option<Value>, raw: Option<String>) -> Result<Reply, DriverError> {
        let url = format!("{}{}", self.base, path);
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                tokio::time::sleep(Duration::from_millis(50 * u64::from(attempt))).await;
            }
            let mut req = self.http.request(method.clone(), &url).bearer_auth(&*self.token);
            if let Some(b) = &body {
                req = req.json(b);
            }
            if let Some(r) = &raw {
                req = req.header(reqwest::header::CONTENT_TYPE, "text/csv").body(r.clone());
            }
            match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.json::<Value>().await.unwrap_or(Value::Null);
                    if status.is_server_error() {
                        last = format!("{status}: {body}");
                        continue;
                    }
                    return Ok(Reply { status, body });
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(DriverError::ServerUnreachable {
            url: self.base.to_string(),
            reason: last,
        })
    }

    async fn post(&self, path: &str, body: Value) -> Result<Reply, DriverError> {
        self.send(Method::POST, path, Some(body), None).await
    }

    async fn get<T: for<'de> Deserialize<'de>>(&self, path: &str) -> Result<T, DriverError> {
        let reply = self.send(Method::GET, path, None, None).await?;
        expect_ok(path, reply)
    }
}

fn expect_ok<T: for<'de> Deserialize<'de>>(what: &str, reply: Reply) -> Result<T, DriverError> {
    if !reply.status.is_success() {
        return Err(DriverError::Rejected {
            what: what.to_string(),
            status: reply.status.as_u16(),
            body: reply.body,
        });
    }
    serde_json::from_value(reply.body.clone()).map_err(|e| DriverError::Rejected {
        what: format!("{what} (decoding: {e})"),
        status: reply.status.as_u16(),
        body: reply.body,
    })
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct OperatorRun {
    bins: Vec<BinMetric>,
    pauses: Vec<SeededPause>,
}

struct OperatorJob {
    index: usize,
    terminal: Terminal,
    session_id: String,
    route: Vec<BinVisit>,
    physical: Arc<BTreeMap<String, Vec<HandlingUnitRef>>>,
    cfg: Arc<SimConfig>,
    warehouse: Arc<Warehouse>,
}

fn stalled(bin: &str, reason: impl Into<String>) -> DriverError {
    DriverError::StalledBin {
        bin: bin.to_string(),
        reason: reason.into(),
    }
}

impl OperatorJob {
    async fn run(self) -> Result<OperatorRun, DriverError> {
        let clock = Clock::new(&self.cfg, &self.warehouse.rows);
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.cfg.seed ^ splitmix(self.index as u64 + 1)));
        let mut t = self.cfg.start_at;
        let mut out = OperatorRun {
            bins: Vec::new(),
            pauses: Vec::new(),
        };
        let mut event = 0u64;
        let empty = Vec::new();
        let sid = &self.session_id;

        for (pos, visit) in self.route.iter().enumerate() {
            let bin = visit.bin_code.as_str();
            let start = self
                .terminal
                .post(&format!("/sessions/{sid}/bins/{bin}/start"), json!({ "at": t }))
                .await?;
            let operator_id = match (start.status.is_success(), start.code()) {
                (true, _) | (false, "ALREADY_STARTED") => start.body["assigned_operator"].as_str().unwrap_or_default().to_string(),
                _ => return Err(stalled(bin, format!("start refused: {}", start.body))),
            };
            let mut metric = BinMetric {
                operator_id,
                bin_code: bin.to_string(),
                started_at: t,
                finished_at: t,
                scans: 0,
                duplicates_sent: 0,
                surplus_acks: 0,
                signoff_attempts: 0,
            };

            let present = self.physical.get(bin).unwrap_or(&empty);
            let mut seen_batches = BTreeSet::new();
            for scan in clock.bin_scans(visit, present) {
                let at = metric.started_at + scan.offset;
                event += 1;
                let body = json!({
                    "session_id": sid,
                    "bin_code": bin,
                    "event_id": format!("sim{}-op{}-{}", self.cfg.seed, self.index + 1, event),
                    "payload": format_qr(&scan.unit),
                    "at": at,
                });
                let copies = if rng.random_bool(self.cfg.duplicate_rate) { 2 } else { 1 };
                let mut first: Option<Value> = None;
                for _ in 0..copies {
                    let reply = self.terminal.post("/scans", body.clone()).await?;
                    if !reply.status.is_success() {
                        return Err(stalled(bin, format!("scan refused: {}", reply.body)));
                    }
                    match &first {
                        None => first = Some(reply.body),
                        Some(f) if *f != reply.body => {
                            return Err(stalled(bin, format!("resent scan changed outcome: {f} then {}", reply.body)))
                        }
                        Some(_) => {}
                    }
                }
                metric.scans += 1;
                metric.duplicates_sent += copies - 1;
                seen_batches.insert(scan.unit.batch_code.clone());
                let label = first.as_ref().and_then(|f| f["classification"].as_str()).unwrap_or("");
                if matches!(label, "MISPLACED" | "UNKNOWN") {
                    self.ack(bin, &scan.unit.hu_code, at).await?;
                    metric.surplus_acks += 1;
                }
                t = at;
            }
            t = t.max(metric.started_at);

            // Batches on the list with nothing found are confirmed absent.
            let mut confirm: Vec<String> = visit
                .batch_order
                .iter()
                .filter(|b| !seen_batches.contains(*b))
                .cloned()
                .collect();
            loop {
                metric.signoff_attempts += 1;
                let reply = self
                    .terminal
                    .post(
                        &format!("/sessions/{sid}/bins/{bin}/signoff"),
                        json!({ "confirm_missing_batches": confirm, "at": t }),
                    )
                    .await?;
                if reply.status.is_success() || (metric.signoff_attempts > 1 && reply.code() == "TASK_COMPLETED") {
                    break;
                }
                if reply.code() != "INCOMPLETE_BATCH_LIST" || metric.signoff_attempts >= 3 {
                    return Err(stalled(bin, format!("sign-off refused: {}", reply.body)));
                }
                for b in reply.body["blocking_batches"].as_array().into_iter().flatten() {
                    if let Some(b) = b.as_str() {
                        confirm.push(b.to_string());
                    }
                }
                for hu in reply.body["unacknowledged_surplus"].as_array().into_iter().flatten() {
                    if let Some(hu) = hu.as_str() {
                        self.ack(bin, hu, t).await?;
                        metric.surplus_acks += 1;
                    }
                }
            }
            metric.finished_at = t;
            let operator_id = metric.operator_id.clone();
            out.bins.push(metric);

            if pos + 1 < self.route.len() && rng.random_bool(self.cfg.pause_rate) {
                let seconds = rng.random_range(self.cfg.pause_min_secs..=self.cfg.pause_max_secs);
                out.pauses.push(SeededPause {
                    operator_id,
                    start: t,
                    seconds,
                });
                t += seconds;
            }
        }
        Ok(out)
    }

    async fn ack(&self, bin: &str, hu: &str, at: i64) -> Result<(), DriverError> {
        let sid = &self.session_id;
        let reply = self
            .terminal
            .post(
                &format!("/sessions/{sid}/bins/{bin}/ack-surplus"),
                json!({ "hu_code": hu, "returned": true, "at": at }),
            )
            .await?;
        if !reply.status.is_success() {
            return Err(stalled(bin, format!("acknowledgment of {hu} refused: {}", reply.body)));
        }
        Ok(())
    }
}

fn summarize(bins: &[BinMetric]) -> Vec<OperatorMetric> {
    let mut by_op: BTreeMap<&str, OperatorMetric> = BTreeMap::new();
    for b in bins {
        let m = by_op.entry(&b.operator_id).or_insert_with(|| OperatorMetric {
            operator_id: b.operator_id.clone(),
            bins: 0,
            started_at: b.started_at,
            finished_at: b.finished_at,
            scans: 0,
            duplicates_sent: 0,
            surplus_acks: 0,
            signoff_attempts: 0,
        });
        m.bins += 1;
        m.started_at = m.started_at.min(b.started_at);
        m.finished_at = m.finished_at.max(b.finished_at);
        m.scans += b.scans;
        m.duplicates_sent += b.duplicates_sent;
        m.surplus_acks += b.surplus_acks;
        m.signoff_attempts += b.signoff_attempts;
    }
    by_op.into_values().collect()
}

fn engine_snapshot(health: &Value) -> (u64, u64) {
    let m = &health["metrics"];
    (
        m["engine_micros"].as_u64().unwrap_or(0),
        m["requests"].as_u64().unwrap_or(0),
    )
}

/// Imports the reference (when configured), opens a session, fetches a
/// route plan for `cfg.operators` and runs one task per operator token.
pub async fn run_count(server: &str, cfg: &SimConfig, warehouse: &Warehouse) -> Result<RunReport, DriverError> {
    if cfg.operator_tokens.len() < cfg.operators || cfg.operators == 0 {
        return Err(DriverError::Config(format!(
            "{} operators need as many tokens, {} given",
            cfg.operators,
            cfg.operator_tokens.len()
        )));
    }
    let wall = Instant::now();
    let http = reqwest::Client::builder()
        .timeout(Duration::from_secs(cfg.request_timeout_secs))
        .build()
        .map_err(|e| DriverError::Config(e.to_string()))?;
    let base: Arc<str> = server.trim_end_matches('/').into();
    let terminal = |token: &str| Terminal {
        http: http.clone(),
        base: base.clone(),
        token: token.into(),
        retries: cfg.max_retries,
    };
    let admin = terminal(&cfg.admin_token);

    let before: Value = admin.get("/healthz").await?;
    if cfg.import_reference {
        let reply = admin
            .send(Method::POST, "/reference", None, Some(warehouse.reference_csv()))
            .await?;
        expect_ok::<Value>("reference import", reply)?;
    }
    let session: Value = expect_ok("session creation", admin.post("/sessions", json!({})).await?)?;
    let session_id = session["session_id"].as_str().unwrap_or_default().to_string();
    let plan: RoutePlan = admin
        .get(&format!("/sessions/{session_id}/route-plan?k={}", cfg.operators))
        .await?;
    let routes = routes_from_plan(&plan, cfg.operators);

    let shared_cfg = Arc::new(cfg.clone());
    let shared_wh = Arc::new(warehouse.clone());
    let physical = Arc::new(warehouse.physical());
    let mut jobs = JoinSet::new();
    for (index, route) in routes.into_iter().enumerate() {
        let job = OperatorJob {
            index,
            terminal: terminal(&cfg.operator_tokens[index]),
            session_id: session_id.clone(),
            route,
            physical: physical.clone(),
            cfg: shared_cfg.clone(),
            warehouse: shared_wh.clone(),
        };
        jobs.spawn(job.run());
    }
    let mut bins = Vec::new();
    let mut pauses = Vec::new();
    while let Some(joined) = jobs.join_next().await {
        let run = joined.map_err(|e| DriverError::Config(format!("operator task panicked: {e}")))??;
        bins.extend(run.bins);
        pauses.extend(run.pauses);
    }
    bins.sort_by(|a, b| (&a.operator_id, a.started_at, &a.bin_code).cmp(&(&b.operator_id, b.started_at, &b.bin_code)));
    pauses.sort_by(|a, b| (&a.operator_id, a.start).cmp(&(&b.operator_id, b.start)));

    let discrepancies: DiscrepancyReport = admin.get(&format!("/sessions/{session_id}/discrepancies")).await?;
    let activity: ActivityTimeline = admin.get(&format!("/sessions/{session_id}/activity")).await?;
    let after: Value = admin.get("/healthz").await?;
    let (micros0, req0) = engine_snapshot(&before);
    let (micros1, req1) = engine_snapshot(&after);

    let first = bins.iter().map(|b| b.started_at).min().unwrap_or(cfg.start_at);
    let last = bins.iter().map(|b| b.finished_at).max().unwrap_or(cfg.start_at);
    Ok(RunReport {
        session_id,
        operators: summarize(&bins),
        bins,
        pauses,
        discrepancies,
        activity,
        makespan_secs: last - first,
        engine_micros: micros1.saturating_sub(micros0),
        requests: req1.saturating_sub(req0),
        wall: wall.elapsed(),
    })
}

pub const METRICS_HEADER: &str =
    "record,operator_id,bin_code,started_at,finished_at,seconds,scans,duplicates_sent,surplus_acks,signoff_attempts";

/// One BIN row per counted bin followed by one OPERATOR row per operator.
pub fn metrics_csv(report: &RunReport) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for b in &report.bins {
        out.push_str(&format!(
            "BIN,{},{},{},{},{},{},{},{},{}\n",
            b.operator_id,
            b.bin_code,
            b.started_at,
            b.finished_at,
            b.finished_at - b.started_at,
            b.scans,
            b.duplicates_sent,
            b.surplus_acks,
            b.signoff_attempts
        ));
    }
    for o in &report.operators {
        out.push_str(&format!(
            "OPERATOR,{},,{},{},{},{},{},{},{}\n",
            o.operator_id,
            o.started_at,
            o.finished_at,
            o.finished_at - o.started_at,
            o.scans,
            o.duplicates_sent,
            o.surplus_acks,
            o.signoff_attempts
        ));
    }
    out
}
