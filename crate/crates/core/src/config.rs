//! `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected so
//! typos do not silently fall back to defaults.
//!
//! ```text
//! # optimizer
//! per_unit_scan_cost = 2.0
//! category_step_cost = 5
//! exact_cutoff = 12
//! idle_threshold_secs = 900
//! fsync = true
//! ```

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::monitor::DEFAULT_IDLE_THRESHOLD_SECS;
use crate::optimizer::{CostModel, Thresholds};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Config {
    pub cost: CostModel,
    pub thresholds: Thresholds,
    pub idle_threshold_secs: i64,
    pub fsync: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            cost: CostModel::default(),
            thresholds: Thresholds::default(),
            idle_threshold_secs: DEFAULT_IDLE_THRESHOLD_SECS,
            fsync: false,
        }
    }
}

fn value<T: FromStr>(raw: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("bad value {raw:?}: {e}"))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Config::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let invalid = |reason: String| ConfigError::Invalid { line: i + 1, reason };
            let Some((key, val)) = line.split_once('=') else {
                return Err(invalid("expected key = value".into()));
            };
            let (key, val) = (key.trim(), val.trim());
            let r: Result<(), String> = (|| {
                match key {
                    "per_unit_scan_cost" => c.cost.per_unit_scan_cost = value(val)?,
                    "category_step_cost" => c.cost.switch.category_step = value(val)?,
                    "shelving_gap_cost" => c.cost.switch.gap_cost = value(val)?,
                    "shelving_gap_days" => c.cost.switch.gap_period_days = value(val)?,
                    "score_hu_coef" => c.cost.score_hu_coef = Some(value(val)?),
                    "score_batch_coef" => c.cost.score_batch_coef = Some(value(val)?),
                    "few_batch_max" => c.thresholds.few_batch_max = value(val)?,
                    "large_hu_min" => c.thresholds.large_hu_min = value(val)?,
                    "exact_cutoff" => c.thresholds.exact_cutoff = value(val)?,
                    "idle_threshold_secs" => c.idle_threshold_secs = value(val)?,
                    "fsync" => c.fsync = value(val)?,
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            r.map_err(invalid)?;
        }
        if c.cost.switch.gap_period_days <= 0.0 {
            return Err(ConfigError::Invalid {
                line: 0,
                reason: "shelving_gap_days must be positive".into(),
            });
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}
