use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::HeaderMap;
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stocktake_core::archive::ArchiveBundle;
use stocktake_core::monitor::{self, ActivityTimeline, CompletionStats, DiscrepancyReport, ProgressReport};
use stocktake_core::optimizer::{build_route_plan, profiles_from_reference, RoutePlan};
use stocktake_core::session::{BinTaskView, ScanRequest, SessionSummary};
use stocktake_core::{Actor, BinReconciliation, ClearScope, Config, Engine, StocktakeError};

use crate::error::ApiError;

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Default)]
pub struct Metrics {
    pub requests: AtomicU64,
    pub errors: AtomicU64,
    /// Time spent holding the engine lock, in microseconds.
    pub engine_micros: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub requests: u64,
    pub errors: u64,
    pub engine_micros: u64,
}

impl Metrics {
    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            requests: self.requests.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
            engine_micros: self.engine_micros.load(Ordering::Relaxed),
        }
    }
}

pub struct AppState {
    engine: Mutex<Engine>,
    pub config: Config,
    pub metrics: Metrics,
}

/// Holds the engine lock and books the time it was held.
pub struct EngineGuard<'a> {
    guard: MutexGuard<'a, Engine>,
    since: Instant,
    metrics: &'a Metrics,
}

impl std::ops::Deref for EngineGuard<'_> {
    type Target = Engine;
    fn deref(&self) -> &Engine {
        &self.guard
    }
}

impl std::ops::DerefMut for EngineGuard<'_> {
    fn deref_mut(&mut self) -> &mut Engine {
        &mut self.guard
    }
}

impl Drop for EngineGuard<'_> {
    fn drop(&mut self) {
        let micros = self.since.elapsed().as_micros() as u64;
        self.metrics.engine_micros.fetch_add(micros, Ordering::Relaxed);
    }
}

impl AppState {
    pub fn new(engine: Engine, config: Config) -> Arc<Self> {
        Arc::new(AppState {
            engine: Mutex::new(engine),
            config,
            metrics: Metrics::default(),
        })
    }

    /// All engine calls are serialized behind one lock, which makes every
    /// bin task linearizable.
    pub fn engine(&self) -> EngineGuard<'_> {
        let guard = self.engine.lock().unwrap_or_else(|p| p.into_inner());
        EngineGuard {
            guard,
            since: Instant::now(),
            metrics: &self.metrics,
        }
    }
}

pub fn now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs() as i64)
}

fn bearer(headers: &HeaderMap) -> Result<&str, ApiError> {
    let value = headers
        .get(axum::http::header::AUTHORIZATION)
        .ok_or_else(|| ApiError::unauthorized("missing Authorization header"))?
        .to_str()
        .map_err(|_| ApiError::unauthorized("malformed Authorization header"))?;
    value
        .strip_prefix("Bearer ")
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| ApiError::unauthorized("expected a Bearer token"))
}

fn actor(state: &AppState, headers: &HeaderMap) -> Result<Actor, ApiError> {
    let token = bearer(headers)?;
    Ok(state.engine().authenticate(token)?)
}

/// Parses an optional JSON body; an empty body yields the default.
fn body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

fn required_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

async fn count_requests(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    state.metrics.requests.fetch_add(1, Ordering::Relaxed);
    let resp = next.run(req).await;
    if !resp.status().is_success() {
        state.metrics.errors.fetch_add(1, Ordering::Relaxed);
    }
    resp
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/reference", post(import_reference))
        .route("/clear", post(clear))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_detail))
        .route("/sessions/{id}/bins/{bin}", get(bin_detail))
        .route("/sessions/{id}/bins/{bin}/start", post(start_bin))
        .route("/sessions/{id}/bins/{bin}/ack-surplus", post(ack_surplus))
        .route("/sessions/{id}/bins/{bin}/signoff", post(signoff))
        .route("/sessions/{id}/archive", post(archive))
        .route("/sessions/{id}/progress", get(progress))
        .route("/sessions/{id}/discrepancies", get(discrepancies))
        .route("/sessions/{id}/activity", get(activity))
        .route("/sessions/{id}/completion-stats", get(completion_stats))
        .route("/sessions/{id}/route-plan", get(route_plan))
        .route("/scans", post(submit_scan))
        .route("/archives", get(list_archives))
        .route("/archives/{id}", get(get_archive))
        .layer(middleware::from_fn_with_state(state.clone(), count_requests))
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Value> {
    let last_seq = state.engine().store().last_seq();
    Json(json!({
        "status": "ok",
        "last_seq": last_seq,
        "metrics": state.metrics.snapshot(),
    }))
}

async fn import_reference(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    csv: Bytes,
) -> ApiResult<stocktake_core::reference::ReferenceSummary> {
    let actor = actor(&state, &headers)?;
    Ok(Json(state.engine().import_reference(&actor, &csv, now())?))
}

#[derive(Debug, Deserialize)]
struct ClearBody {
    scope: ClearScope,
}

async fn clear(State(state): State<Arc<AppState>>, headers: HeaderMap, bytes: Bytes) -> ApiResult<Value> {
    let actor = actor(&state, &headers)?;
    let req: ClearBody = required_body(&bytes)?;
    state.engine().clear_data(&actor, req.scope, now())?;
    Ok(Json(json!({ "cleared": req.scope })))
}

async fn create_session(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<SessionSummary> {
    let actor = actor(&state, &headers)?;
    Ok(Json(state.engine().create_session(&actor, now())?))
}

async fn list_sessions(State(state): State<Arc<AppState>>, headers: HeaderMap) -> ApiResult<Vec<SessionSummary>> {
    actor(&state, &headers)?;
    let e = state.engine();
    Ok(Json(e.state().sessions().values().map(|s| s.summary()).collect()))
}

#[derive(Debug, Serialize)]
struct SessionDetail {
    #[serde(flatten)]
    summary: SessionSummary,
    tasks: Vec<BinTaskView>,
}

async fn session_detail(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<SessionDetail> {
    actor(&state, &headers)?;
    let e = state.engine();
    let s = e.state().session(&id)?;
    Ok(Json(SessionDetail {
        summary: s.summary(),
        tasks: s.bin_tasks.values().map(|t| t.view()).collect(),
    }))
}

#[derive(Debug, Serialize)]
struct BinDetail {
    task: BinTaskView,
    reconciliation: BinReconciliation,
}

async fn bin_detail(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, bin)): Path<(String, String)>,
) -> ApiResult<BinDetail> {
    actor(&state, &headers)?;
    let e = state.engine();
    let s = e.state().session(&id)?;
    Ok(Json(BinDetail {
        task: s.task(&bin)?.view(),
        reconciliation: s.reconciliation(&bin)?,
    }))
}

#[derive(Debug, Default, Deserialize)]
struct AtBody {
    at: Option<i64>,
}

async fn start_bin(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, bin)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<BinTaskView> {
    let actor = actor(&state, &headers)?;
    let req: AtBody = body(&bytes)?;
    Ok(Json(state.engine().start_bin_task(&actor, &id, &bin, req.at.unwrap_or_else(now))?))
}

#[derive(Debug, Deserialize)]
struct ScanBody {
    session_id: String,
    bin_code: String,
    event_id: Option<String>,
    payload: String,
    at: Option<i64>,
}

async fn submit_scan(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    bytes: Bytes,
) -> ApiResult<stocktake_core::Classification> {
    let actor = actor(&state, &headers)?;
    let req: ScanBody = required_body(&bytes)?;
    let event_id = req
        .event_id
        .filter(|id| !id.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("event_id is required"))?;
    let scan = ScanRequest {
        session_id: req.session_id,
        bin_code: req.bin_code,
        event_id,
        payload: req.payload,
        at: req.at.unwrap_or_else(now),
    };
    Ok(Json(state.engine().submit_scan(&actor, scan)?))
}

#[derive(Debug, Deserialize)]
struct AckBody {
    hu_code: String,
    #[serde(default)]
    returned: bool,
    at: Option<i64>,
}

async fn ack_surplus(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, bin)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<stocktake_core::session::SurplusAckView> {
    let actor = actor(&state, &headers)?;
    let req: AckBody = required_body(&bytes)?;
    let at = req.at.unwrap_or_else(now);
    Ok(Json(state.engine().acknowledge_surplus(&actor, &id, &bin, &req.hu_code, req.returned, at)?))
}

#[derive(Debug, Default, Deserialize)]
struct SignoffBody {
    #[serde(default)]
    confirm_missing_batches: Vec<String>,
    at: Option<i64>,
}

async fn signoff(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path((id, bin)): Path<(String, String)>,
    bytes: Bytes,
) -> ApiResult<BinReconciliation> {
    let actor = actor(&state, &headers)?;
    let req: SignoffBody = body(&bytes)?;
    let at = req.at.unwrap_or_else(now);
    Ok(Json(state.engine().sign_off_bin(&actor, &id, &bin, &req.confirm_missing_batches, at)?))
}

async fn archive(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    bytes: Bytes,
) -> ApiResult<Value> {
    let actor = actor(&state, &headers)?;
    let req: AtBody = body(&bytes)?;
    let archive_id = state.engine().archive_session(&actor, &id, req.at.unwrap_or_else(now))?;
    Ok(Json(json!({ "archive_id": archive_id, "session_id": id })))
}

async fn progress(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<ProgressReport> {
    actor(&state, &headers)?;
    let e = state.engine();
    Ok(Json(monitor::progress(e.state().session(&id)?)))
}

async fn discrepancies(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<DiscrepancyReport> {
    actor(&state, &headers)?;
    let e = state.engine();
    Ok(Json(monitor::discrepancies(e.state().session(&id)?)))
}

#[derive(Debug, Deserialize)]
struct ActivityQuery {
    idle_threshold: Option<i64>,
}

async fn activity(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<ActivityQuery>,
) -> ApiResult<ActivityTimeline> {
    actor(&state, &headers)?;
    let threshold = q.idle_threshold.unwrap_or(state.config.idle_threshold_secs);
    let e = state.engine();
    Ok(Json(monitor::activity(e.state().session(&id)?, threshold)))
}

#[derive(Debug, Serialize)]
struct StatsResponse {
    durations: Vec<monitor::BinDuration>,
    stats: Option<CompletionStats>,
}

async fn completion_stats(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<StatsResponse> {
    actor(&state, &headers)?;
    let durations = monitor::bin_durations(state.engine().state().session(&id)?);
    let secs: Vec<f64> = durations.iter().map(|d| d.seconds as f64).collect();
    Ok(Json(StatsResponse {
        stats: monitor::completion_stats(&secs).ok(),
        durations,
    }))
}

#[derive(Debug, Deserialize)]
struct PlanQuery {
    k: Option<usize>,
}

async fn route_plan(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
    Query(q): Query<PlanQuery>,
) -> ApiResult<RoutePlan> {
    actor(&state, &headers)?;
    let k = q.k.unwrap_or(1);
    if k == 0 {
        return Err(StocktakeError::Invalid("k must be at least 1".into()).into());
    }
    // Planning is pure; release the engine before the heavy part.
    let reference = state.engine().state().session(&id)?.reference.clone();
    let config = state.config;
    let plan = tokio::task::spawn_blocking(move || {
        build_route_plan(&profiles_from_reference(&reference), k, &config.cost, &config.thresholds)
    })
    .await
    .map_err(|e| ApiError::internal(format!("planning failed: {e}")))?;
    Ok(Json(plan))
}

async fn list_archives(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
) -> ApiResult<Vec<stocktake_core::session::ArchiveRecord>> {
    actor(&state, &headers)?;
    Ok(Json(state.engine().state().archives().values().cloned().collect()))
}

fn bundle_json(bundle: ArchiveBundle) -> Value {
    json!({
        "manifest": bundle.manifest,
        "reconciliation_csv": bundle.reconciliation_csv,
        "entries_jsonl": bundle.entries_jsonl,
    })
}

async fn get_archive(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    Path(id): Path<String>,
) -> ApiResult<Value> {
    actor(&state, &headers)?;
    Ok(Json(bundle_json(state.engine().archive(&id)?)))
}
