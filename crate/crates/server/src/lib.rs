//! JSON-over-HTTP front end for the stocktaking engine.
//!
//! Every request except `GET /healthz` carries `Authorization: Bearer
//! <token>`. Bodies are JSON except `POST /reference`, which takes the
//! reference CSV as is. Errors come back as
//! `{"error": CODE, "message": text, ...}` with a 4xx status for every
//! modeled failure and 503 when the log cannot be written.

pub mod app;
pub mod error;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use stocktake_core::store::RecoveryReport;
use stocktake_core::{Config, Credentials, Engine, Store, StoreConfig};
use tokio::net::TcpListener;

pub use app::{router, AppState, MetricsSnapshot};
pub use error::ApiError;

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub credentials: PathBuf,
    pub primary_log_dir: PathBuf,
    pub mirror_log_dir: PathBuf,
    pub config: Config,
}

/// Opens (and if needed repairs) the mirrored log and replays it.
pub fn open_engine(cfg: &ServerConfig) -> anyhow::Result<(Engine, RecoveryReport)> {
    let credentials = Credentials::load(&cfg.credentials)?;
    let (store, report) = Store::open_dirs(&StoreConfig {
        primary_log_dir: cfg.primary_log_dir.clone(),
        mirror_log_dir: cfg.mirror_log_dir.clone(),
        fsync: cfg.config.fsync,
    })?;
    let engine = Engine::new(store, credentials)?.with_archive_root(archive_root(&cfg.primary_log_dir));
    Ok((engine, report))
}

pub fn archive_root(primary_log_dir: &Path) -> PathBuf {
    primary_log_dir.join("archives")
}

pub async fn serve(listener: TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
