//! Stocktaking engine: reference inventory, scan reconciliation, the
//! event-sourced session state behind a mirrored append-only log, route
//! planning and monitoring aggregates.

pub mod archive;
pub mod auth;
pub mod config;
pub mod events;
pub mod inventory;
pub mod monitor;
pub mod optimizer;
pub mod reference;
pub mod session;
pub mod store;

pub use auth::{Actor, Credentials, Role};
pub use config::Config;
pub use events::{ClearScope, Event};
pub use inventory::{
    classify_scan, parse_qr, reconcile_bin, BinReconciliation, Classification, HandlingUnitRef,
};
pub use reference::{Category, ReferenceInventory};
pub use session::{Engine, ScanRequest, State, StocktakeError};
pub use store::{LogEntry, Store, StoreConfig};
