//! Seeded synthetic warehouses with a known ground truth.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use stocktake_core::monitor::DiscrepancyReport;
use stocktake_core::reference::{parse_reference_csv, write_reference_csv, ReferenceRow};
use stocktake_core::{Category, HandlingUnitRef};
use thiserror::Error;

use crate::config::{SimConfig, SimConfigError};

pub const REFERENCE_FILE: &str = "reference.csv";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.csv";

const SECS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error)]
pub enum WarehouseError {
    #[error(transparent)]
    Config(#[from] SimConfigError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("reference: {0}")]
    Reference(#[from] stocktake_core::reference::ImportError),
    #[error("ground truth does not match the reference: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UnitStatus {
    InPlace,
    Misplaced,
    Lost,
}

/// Where a handling unit really is.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRow {
    pub hu_code: String,
    pub batch_code: String,
    pub reference_bin: String,
    /// Empty when the unit is lost.
    pub physical_bin: String,
    pub status: UnitStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Warehouse {
    /// Sorted by (bin, batch, hu).
    pub rows: Vec<ReferenceRow>,
    /// Same order as `rows`.
    pub truth: Vec<TruthRow>,
}

/// Discrepancies a perfect count must report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpectedDiscrepancies {
    /// (hu, found bin, designated bin)
    pub surplus: BTreeSet<(String, String, String)>,
    /// (hu, reference bin, batch)
    pub shortage: BTreeSet<(String, String, String)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DetectionDiff {
    pub missed_surplus: Vec<(String, String, String)>,
    pub spurious_surplus: Vec<(String, String, String)>,
    pub missed_shortage: Vec<(String, String, String)>,
    pub spurious_shortage: Vec<(String, String, String)>,
}

impl DetectionDiff {
    pub fn is_exact(&self) -> bool {
        self.missed_surplus.is_empty()
            && self.spurious_surplus.is_empty()
            && self.missed_shortage.is_empty()
            && self.spurious_shortage.is_empty()
    }
}

impl ExpectedDiscrepancies {
    /// Compares a server report against the ground truth.
    pub fn diff(&self, report: &DiscrepancyReport) -> DetectionDiff {
        let surplus: BTreeSet<(String, String, String)> = report
            .surplus_units
            .iter()
            .map(|s| (s.hu_code.clone(), s.found_bin.clone(), s.designated_bin.clone().unwrap_or_default()))
            .collect();
        let shortage: BTreeSet<(String, String, String)> = report
            .shortage_units
            .iter()
            .map(|s| (s.hu_code.clone(), s.bin_code.clone(), s.batch_code.clone()))
            .collect();
        DetectionDiff {
            missed_surplus: self.surplus.difference(&surplus).cloned().collect(),
            spurious_surplus: surplus.difference(&self.surplus).cloned().collect(),
            missed_shortage: self.shortage.difference(&shortage).cloned().collect(),
            spurious_shortage: shortage.difference(&self.shortage).cloned().collect(),
        }
    }
}

fn code(prefix: &str, i: usize, n: usize) -> String {
    let width = n.to_string().len();
    format!("{prefix}{:0width$}", i + 1)
}

/// Splits `extra` units over bins in proportion to `weights`, largest
/// remainder first.
fn apportion(weights: &[f64], extra: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / total * extra as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = extra - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

fn batch_count_draw(rng: &mut impl Rng) -> usize {
    let r: f64 = rng.random();
    if r < 0.4 {
        1
    } else if r < 0.8 {
        rng.random_range(2..=3)
    } else {
        rng.random_range(4..=12)
    }
}

fn category_draw(rng: &mut impl Rng) -> Category {
    let r: f64 = rng.random();
    if r < 0.2 {
        Category::A
    } else if r < 0.5 {
        Category::B
    } else {
        Category::C
    }
}

/// Builds a warehouse with exactly `bins`, `batches` and `handling_units`,
/// then misplaces and removes exact shares of the units.
pub fn generate_warehouse(cfg: &SimConfig) -> Result<Warehouse, WarehouseError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n_bins, n_batches, n_units) = (cfg.bins, cfg.batches, cfg.handling_units);

    let shape = LogNormal::new(0.0, cfg.hu_sigma).map_err(|e| SimConfigError::InvalidConfig(e.to_string()))?;
    let weights: Vec<f64> = (0..n_bins).map(|_| shape.sample(&mut rng)).collect();
    let units_per_bin: Vec<usize> = apportion(&weights, n_units - n_bins).into_iter().map(|x| x + 1).collect();

    // Batch slots per bin, never more than the bin's units or the batch pool.
    let mut slots: Vec<usize> = units_per_bin
        .iter()
        .map(|&u| batch_count_draw(&mut rng).min(u).min(n_batches))
        .collect();
    let mut total: usize = slots.iter().sum();
    let mut bin_order: Vec<usize> = (0..n_bins).collect();
    while total < n_batches {
        bin_order.shuffle(&mut rng);
        for &b in &bin_order {
            if total == n_batches {
                break;
            }
            if slots[b] < units_per_bin[b].min(n_batches) {
                slots[b] += 1;
                total += 1;
            }
        }
    }

    // Every batch lands in at least one bin; the remaining slots draw freely.
    let mut slot_bins: Vec<usize> = slots.iter().enumerate().flat_map(|(b, &k)| std::iter::repeat_n(b, k)).collect();
    slot_bins.shuffle(&mut rng);
    let mut bin_batches: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n_bins];
    let mut deferred = Vec::new();
    for (i, &b) in slot_bins.iter().enumerate() {
        if i < n_batches {
            bin_batches[b].insert(i);
        } else {
            deferred.push(b);
        }
    }
    for b in deferred {
        loop {
            let pick = rng.random_range(0..n_batches);
            if bin_batches[b].insert(pick) {
                break;
            }
        }
    }

    let meta: Vec<(Category, i64)> = (0..n_batches)
        .map(|_| {
            let category = category_draw(&mut rng);
            let age = rng.random_range(1..=365) * SECS_PER_DAY + rng.random_range(0..SECS_PER_DAY);
            (category, cfg.start_at - age)
        })
        .collect();

    let mut rows = Vec::with_capacity(n_units);
    let mut hu_index = 0;
    for (b, batches) in bin_batches.iter().enumerate() {
        let batches: Vec<usize> = batches.iter().copied().collect();
        let mut per_batch = vec![1usize; batches.len()];
        for _ in 0..units_per_bin[b] - batches.len() {
            per_batch[rng.random_range(0..batches.len())] += 1;
        }
        for (&batch, &count) in batches.iter().zip(&per_batch) {
            for _ in 0..count {
                rows.push(ReferenceRow {
                    bin_code: code("B", b, n_bins),
                    batch_code: code("L", batch, n_batches),
                    hu_code: code("HU", hu_index, n_units),
                    category: meta[batch].0,
                    shelved_at: meta[batch].1,
                });
                hu_index += 1;
            }
        }
    }

    let mut truth: Vec<TruthRow> = rows
        .iter()
        .map(|r| TruthRow {
            hu_code: r.hu_code.clone(),
            batch_code: r.batch_code.clone(),
            reference_bin: r.bin_code.clone(),
            physical_bin: r.bin_code.clone(),
            status: UnitStatus::InPlace,
        })
        .collect();
    let misplaced = (cfg.misplace_rate * n_units as f64).round() as usize;
    let lost = ((cfg.skip_rate * n_units as f64).round() as usize).min(n_units - misplaced);
    let mut picks: Vec<usize> = (0..n_units).collect();
    picks.shuffle(&mut rng);
    for &i in &picks[..misplaced] {
        let home = &truth[i].reference_bin;
        let target = loop {
            let candidate = code("B", rng.random_range(0..n_bins), n_bins);
            if &candidate != home {
                break candidate;
            }
        };
        truth[i].physical_bin = target;
        truth[i].status = UnitStatus::Misplaced;
    }
    for &i in &picks[misplaced..misplaced + lost] {
        truth[i].physical_bin.clear();
        truth[i].status = UnitStatus::Lost;
    }
    Ok(Warehouse { rows, truth })
}

impl Warehouse {
    pub fn reference_csv(&self) -> String {
        write_reference_csv(&self.rows)
    }

    pub fn ground_truth_csv(&self) -> Result<String, WarehouseError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for t in &self.truth {
            w.serialize(t)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> Result<(), WarehouseError> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(REFERENCE_FILE), self.reference_csv())?;
        fs::write(dir.join(GROUND_TRUTH_FILE), self.ground_truth_csv()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, WarehouseError> {
        let rows = parse_reference_csv(&fs::read(dir.join(REFERENCE_FILE))?)?;
        let mut reader = csv::Reader::from_path(dir.join(GROUND_TRUTH_FILE))?;
        let truth: Vec<TruthRow> = reader.deserialize().collect::<Result<_, _>>()?;
        if truth.len() != rows.len() {
            return Err(WarehouseError::Mismatch(format!("{} truth rows, {} reference rows", truth.len(), rows.len())));
        }
        for (r, t) in rows.iter().zip(&truth) {
            if r.hu_code != t.hu_code || r.bin_code != t.reference_bin || r.batch_code != t.batch_code {
                return Err(WarehouseError::Mismatch(format!("row for {}", t.hu_code)));
            }
        }
        Ok(Warehouse { rows, truth })
    }

    /// Units physically present per bin, sorted by hu code. Every reference
    /// bin has an entry, possibly empty.
    pub fn physical(&self) -> BTreeMap<String, Vec<HandlingUnitRef>> {
        let mut out: BTreeMap<String, Vec<HandlingUnitRef>> =
            self.rows.iter().map(|r| (r.bin_code.clone(), Vec::new())).collect();
        for t in &self.truth {
            if t.status == UnitStatus::Lost {
                continue;
            }
            out.entry(t.physical_bin.clone()).or_default().push(HandlingUnitRef {
                bin_code: t.reference_bin.clone(),
                batch_code: t.batch_code.clone(),
                hu_code: t.hu_code.clone(),
            });
        }
        for units in out.values_mut() {
            units.sort_by(|a, b| a.hu_code.cmp(&b.hu_code));
        }
        out
    }

    pub fn expected(&self) -> ExpectedDiscrepancies {
        let mut e = ExpectedDiscrepancies::default();
        for t in &self.truth {
            match t.status {
                UnitStatus::InPlace => {}
                UnitStatus::Misplaced => {
                    e.surplus
                        .insert((t.hu_code.clone(), t.physical_bin.clone(), t.reference_bin.clone()));
                    e.shortage
                        .insert((t.hu_code.clone(), t.reference_bin.clone(), t.batch_code.clone()));
                }
                UnitStatus::Lost => {
                    e.shortage
                        .insert((t.hu_code.clone(), t.reference_bin.clone(), t.batch_code.clone()));
                }
            }
        }
        e
    }

    pub fn count(&self, status: UnitStatus) -> usize {
        self.truth.iter().filter(|t| t.status == status).count()
    }
}
