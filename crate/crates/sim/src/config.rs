//! Simulator settings, loadable from a `key = value` file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use stocktake_core::optimizer::DefaultSwitchCost;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimConfigError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub bins: usize,
    pub batches: usize,
    pub handling_units: usize,
    /// Informational only; products are never modeled individually.
    pub inner_products_per_hu: f64,
    pub operators: usize,
    pub misplace_rate: f64,
    pub skip_rate: f64,
    /// Log-normal sigma of the handling-unit share per bin.
    pub hu_sigma: f64,
    /// Median seconds per scan.
    pub scan_interval_median: f64,
    pub scan_interval_sigma: f64,
    /// Chance that a scan request is delivered a second time.
    pub duplicate_rate: f64,
    /// Chance of a pause after finishing a bin.
    pub pause_rate: f64,
    pub pause_min_secs: i64,
    pub pause_max_secs: i64,
    pub switch: DefaultSwitchCost,
    pub seed: u64,
    /// Simulated wall clock at the start of the count.
    pub start_at: i64,

    // Driver settings used by `simrun`.
    pub warehouse_dir: PathBuf,
    pub admin_token: String,
    pub operator_tokens: Vec<String>,
    pub import_reference: bool,
    pub request_timeout_secs: u64,
    pub max_retries: u32,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            bins: 500,
            batches: 1000,
            handling_units: 37_000,
            inner_products_per_hu: 54.0,
            operators: 10,
            misplace_rate: 0.0,
            skip_rate: 0.0,
            hu_sigma: 0.8,
            scan_interval_median: 2.0,
            scan_interval_sigma: 0.35,
            duplicate_rate: 0.0,
            pause_rate: 0.0,
            pause_min_secs: 900,
            pause_max_secs: 2400,
            switch: DefaultSwitchCost::default(),
            seed: 42,
            start_at: 1_700_000_000,
            warehouse_dir: PathBuf::from("warehouse"),
            admin_token: String::new(),
            operator_tokens: Vec::new(),
            import_reference: true,
            request_timeout_secs: 30,
            max_retries: 5,
        }
    }
}

fn value<T: FromStr>(raw: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| format!("bad value {raw:?}: {e}"))
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, SimConfigError> {
        let mut c = SimConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |reason: String| SimConfigError::Syntax { line: i + 1, reason };
            let (key, val) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| syntax("expected key = value".into()))?;
            let r: Result<(), String> = (|| {
                match key {
                    "bins" => c.bins = value(val)?,
                    "batches" => c.batches = value(val)?,
                    "handling_units" => c.handling_units = value(val)?,
                    "inner_products_per_hu" => c.inner_products_per_hu = value(val)?,
                    "operators" => c.operators = value(val)?,
                    "misplace_rate" => c.misplace_rate = value(val)?,
                    "skip_rate" => c.skip_rate = value(val)?,
                    "hu_sigma" => c.hu_sigma = value(val)?,
                    "scan_interval_median" => c.scan_interval_median = value(val)?,
                    "scan_interval_sigma" => c.scan_interval_sigma = value(val)?,
                    "duplicate_rate" => c.duplicate_rate = value(val)?,
                    "pause_rate" => c.pause_rate = value(val)?,
                    "pause_min_secs" => c.pause_min_secs = value(val)?,
                    "pause_max_secs" => c.pause_max_secs = value(val)?,
                    "category_step_cost" => c.switch.category_step = value(val)?,
                    "shelving_gap_cost" => c.switch.gap_cost = value(val)?,
                    "shelving_gap_days" => c.switch.gap_period_days = value(val)?,
                    "seed" => c.seed = value(val)?,
                    "start_at" => c.start_at = value(val)?,
                    "warehouse_dir" => c.warehouse_dir = PathBuf::from(val),
                    "admin_token" => c.admin_token = val.to_string(),
                    "operator_tokens" => {
                        c.operator_tokens = val
                            .split(',')
                            .map(str::trim)
                            .filter(|t| !t.is_empty())
                            .map(String::from)
                            .collect()
                    }
                    "import_reference" => c.import_reference = value(val)?,
                    "request_timeout_secs" => c.request_timeout_secs = value(val)?,
                    "max_retries" => c.max_retries = value(val)?,
                    other => return Err(format!("unknown key {other:?}")),
                }
                Ok(())
            })();
            r.map_err(syntax)?;
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, SimConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Checks the generator settings.
    pub fn validate(&self) -> Result<(), SimConfigError> {
        let fail = |m: &str| Err(SimConfigError::InvalidConfig(m.to_string()));
        if self.bins == 0 || self.batches == 0 {
            return fail("bins and batches must be positive");
        }
        if self.handling_units < self.bins || self.handling_units < self.batches {
            return fail("need at least one handling unit per bin and per batch");
        }
        for (name, p) in [
            ("misplace_rate", self.misplace_rate),
            ("skip_rate", self.skip_rate),
            ("duplicate_rate", self.duplicate_rate),
            ("pause_rate", self.pause_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(&format!("{name} must be within [0, 1]"));
            }
        }
        if self.misplace_rate + self.skip_rate > 1.0 {
            return fail("misplace_rate + skip_rate exceeds 1");
        }
        if self.misplace_rate > 0.0 && self.bins < 2 {
            return fail("misplacement needs at least two bins");
        }
        if self.hu_sigma < 0.0 || self.scan_interval_sigma < 0.0 || self.scan_interval_median <= 0.0 {
            return fail("distribution parameters must be non-negative, median positive");
        }
        if self.pause_min_secs < 0 || self.pause_max_secs < self.pause_min_secs {
            return fail("pause range is empty");
        }
        Ok(())
    }
}
