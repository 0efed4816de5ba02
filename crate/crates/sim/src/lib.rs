//! Seeded warehouse generation and scripted operators for exercising a
//! stocktake server end to end.
//!
//! [`generate_warehouse`] builds a reference inventory plus a ground truth
//! of which units are really where. [`run_count`] then drives one terminal
//! per operator over HTTP, following the server's route plan, and reports
//! per-bin metrics alongside the server's discrepancy report.

pub mod config;
pub mod driver;
pub mod timing;
pub mod warehouse;

pub use config::{SimConfig, SimConfigError};
pub use driver::{metrics_csv, run_count, DriverError, RunReport, SeededPause};
pub use warehouse::{generate_warehouse, ExpectedDiscrepancies, UnitStatus, Warehouse, WarehouseError};
