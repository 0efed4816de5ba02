//! Simulated operator time, in whole seconds.
//!
//! Scan durations depend only on the seed and the handling unit, so two
//! routings of the same warehouse differ only in switching and balance.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use stocktake_core::optimizer::{BatchEntry, DefaultSwitchCost, RoutePlan, SwitchCost};
use stocktake_core::reference::ReferenceRow;
use stocktake_core::HandlingUnitRef;

use crate::config::SimConfig;
use crate::warehouse::Warehouse;

/// One bin of an operator's route.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinVisit {
    pub bin_code: String,
    pub batch_order: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedScan {
    pub unit: HandlingUnitRef,
    /// Seconds from the start of the bin until this scan completes.
    pub offset: i64,
}

pub struct Clock<'a> {
    cfg: &'a SimConfig,
    meta: BTreeMap<String, BatchEntry>,
    scan: LogNormal<f64>,
}

impl<'a> Clock<'a> {
    pub fn new(cfg: &'a SimConfig, rows: &[ReferenceRow]) -> Self {
        let meta = rows
            .iter()
            .map(|r| {
                (
                    r.batch_code.clone(),
                    BatchEntry {
                        code: r.batch_code.clone(),
                        category: r.category,
                        shelved_at: r.shelved_at,
                    },
                )
            })
            .collect();
        let scan = LogNormal::new(cfg.scan_interval_median.ln(), cfg.scan_interval_sigma)
            .expect("validated scan interval parameters");
        Clock { cfg, meta, scan }
    }

    pub fn switch(&self) -> &DefaultSwitchCost {
        &self.cfg.switch
    }

    pub fn scan_secs(&self, hu_code: &str) -> i64 {
        let mix = (crc32fast::hash(hu_code.as_bytes()) as u64) << 32 ^ self.cfg.seed.rotate_left(17);
        let mut rng = ChaCha8Rng::seed_from_u64(mix);
        (self.scan.sample(&mut rng).round() as i64).max(1)
    }

    pub fn switch_secs(&self, from: &str, to: &str) -> i64 {
        match (self.meta.get(from), self.meta.get(to)) {
            (Some(a), Some(b)) => self.cfg.switch.switch_cost(a, b).round() as i64,
            _ => 0,
        }
    }

    /// Scans for one bin: planned batches in order, then any stray units.
    /// Switching is charged between consecutive batches that have units.
    pub fn bin_scans(&self, visit: &BinVisit, present: &[HandlingUnitRef]) -> Vec<TimedScan> {
        let mut by_batch: BTreeMap<&str, Vec<&HandlingUnitRef>> = BTreeMap::new();
        for u in present {
            by_batch.entry(u.batch_code.as_str()).or_default().push(u);
        }
        let mut groups: Vec<Vec<&HandlingUnitRef>> = Vec::new();
        for batch in &visit.batch_order {
            if let Some(units) = by_batch.remove(batch.as_str()) {
                groups.push(units);
            }
        }
        groups.extend(by_batch.into_values());

        let mut out = Vec::with_capacity(present.len());
        let mut t = 0;
        let mut prev: Option<&str> = None;
        for group in groups {
            let batch = group[0].batch_code.as_str();
            if let Some(p) = prev {
                t += self.switch_secs(p, batch);
            }
            prev = Some(batch);
            for unit in group {
                t += self.scan_secs(&unit.hu_code);
                out.push(TimedScan {
                    unit: unit.clone(),
                    offset: t,
                });
            }
        }
        out
    }

    pub fn bin_secs(&self, visit: &BinVisit, present: &[HandlingUnitRef]) -> i64 {
        self.bin_scans(visit, present).last().map_or(0, |s| s.offset)
    }
}

/// Routes from a plan. Bins the plan left out go to the first operator.
pub fn routes_from_plan(plan: &RoutePlan, operators: usize) -> Vec<Vec<BinVisit>> {
    let mut routes = vec![Vec::new(); operators.max(1)];
    for op in &plan.operators {
        routes[op.operator - 1] = op
            .bins
            .iter()
            .map(|b| BinVisit {
                bin_code: b.bin_code.clone(),
                batch_order: b.batch_order.clone(),
            })
            .collect();
    }
    routes[0].extend(plan.empty_bins.iter().map(|b| BinVisit {
        bin_code: b.clone(),
        batch_order: Vec::new(),
    }));
    routes
}

/// The unplanned baseline: bins in code order cut into equal contiguous
/// runs, batches in storage order.
pub fn naive_routes(warehouse: &Warehouse, operators: usize) -> Vec<Vec<BinVisit>> {
    let mut bins: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for r in &warehouse.rows {
        let batches = bins.entry(&r.bin_code).or_default();
        if batches.last() != Some(&r.batch_code) {
            batches.push(r.batch_code.clone());
        }
    }
    let k = operators.max(1);
    let n = bins.len();
    let mut routes = vec![Vec::new(); k];
    for (i, (bin, batches)) in bins.into_iter().enumerate() {
        routes[i * k / n.max(1)].push(BinVisit {
            bin_code: bin.to_string(),
            batch_order: batches,
        });
    }
    routes
}

/// Time until the last operator finishes, ignoring pauses and latency.
pub fn makespan(clock: &Clock, warehouse: &Warehouse, routes: &[Vec<BinVisit>]) -> i64 {
    let physical = warehouse.physical();
    routes
        .iter()
        .map(|route| {
            route
                .iter()
                .map(|v| clock.bin_secs(v, physical.get(&v.bin_code).map_or(&[][..], Vec::as_slice)))
                .sum::<i64>()
        })
        .max()
        .unwrap_or(0)
}
