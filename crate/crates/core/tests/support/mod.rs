//! Random warehouses, a brute-force reconciliation oracle and a random
//! operation driver, shared by the property tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use stocktake_core::inventory::{BinReconciliation, HandlingUnitRef};
use stocktake_core::reference::{Category, ReferenceInventory, ReferenceRow};
use stocktake_core::session::{Engine, ScanRequest, State, StocktakeError, TaskState};
use stocktake_core::{Actor, Credentials, Store};

pub struct Warehouse {
    pub rows: Vec<ReferenceRow>,
    pub reference: ReferenceInventory,
    /// Where each bin's units physically are, including strays and units
    /// with codes unknown to the reference.
    pub physical: BTreeMap<String, Vec<HandlingUnitRef>>,
}

/// Up to `max_bins` bins and `max_units` units; a share of units up to
/// `max_rate` is moved to another bin and another share is lost.
pub fn random_warehouse(rng: &mut impl Rng, max_bins: usize, max_units: usize, max_rate: f64) -> Warehouse {
    let n_bins = rng.random_range(1..=max_bins);
    let n_units = rng.random_range(n_bins..=max_units.max(n_bins));
    let n_batches = rng.random_range(1..=n_bins * 2);
    let batch_meta: Vec<(Category, i64)> = (0..n_batches)
        .map(|_| {
            let c = [Category::A, Category::B, Category::C][rng.random_range(0..3)];
            (c, rng.random_range(0..400) * 86_400)
        })
        .collect();

    let mut rows = Vec::with_capacity(n_units);
    for i in 0..n_units {
        // Every bin gets at least one unit.
        let bin = if i < n_bins { i } else { rng.random_range(0..n_bins) };
        let batch = rng.random_range(0..n_batches);
        rows.push(ReferenceRow {
            bin_code: format!("B{bin:03}"),
            batch_code: format!("L{batch:03}"),
            hu_code: format!("H{i:05}"),
            category: batch_meta[batch].0,
            shelved_at: batch_meta[batch].1,
        });
    }
    let reference = ReferenceInventory::from_rows(rows.clone()).expect("generated rows are valid");

    let misplace = rng.random_range(0.0..=max_rate);
    let skip = rng.random_range(0.0..=max_rate);
    let bins: Vec<String> = reference.bin_codes().cloned().collect();
    let mut physical: BTreeMap<String, Vec<HandlingUnitRef>> =
        bins.iter().map(|b| (b.clone(), Vec::new())).collect();
    for row in &rows {
        let unit = HandlingUnitRef {
            bin_code: row.bin_code.clone(),
            batch_code: row.batch_code.clone(),
            hu_code: row.hu_code.clone(),
        };
        if rng.random_bool(skip) {
            continue;
        }
        let at = if bins.len() > 1 && rng.random_bool(misplace) {
            loop {
                let b = bins.choose(rng).unwrap();
                if *b != row.bin_code {
                    break b.clone();
                }
            }
        } else {
            row.bin_code.clone()
        };
        physical.get_mut(&at).unwrap().push(unit);
    }
    for (i, bin) in bins.iter().enumerate() {
        if rng.random_bool(misplace / 2.0) {
            physical.get_mut(bin).unwrap().push(HandlingUnitRef {
                bin_code: bin.clone(),
                batch_code: "LX".into(),
                hu_code: format!("FOREIGN{i}"),
            });
        }
    }
    Warehouse {
        rows,
        reference,
        physical,
    }
}

pub fn reference_csv(rows: &[ReferenceRow]) -> Vec<u8> {
    stocktake_core::reference::write_reference_csv(rows).into_bytes()
}

/// The scans an operator would submit for a bin: every unit present, in a
/// random order, with some units scanned again.
pub fn scans_with_repeats(rng: &mut impl Rng, units: &[HandlingUnitRef], dup_rate: f64) -> Vec<HandlingUnitRef> {
    let mut scans = units.to_vec();
    for u in units {
        if rng.random_bool(dup_rate) {
            scans.push(u.clone());
        }
    }
    scans.shuffle(rng);
    scans
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleBatch {
    pub expected: usize,
    pub counted: usize,
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleBin {
    pub batches: BTreeMap<String, OracleBatch>,
    pub surplus: Vec<(String, Option<String>)>,
    pub complete: bool,
}

/// Set differences by linear search over the raw rows.
pub fn oracle_reconcile(rows: &[ReferenceRow], bin: &str, scans: &[HandlingUnitRef]) -> OracleBin {
    let mut scanned: Vec<&str> = Vec::new();
    for s in scans {
        if !scanned.contains(&s.hu_code.as_str()) {
            scanned.push(&s.hu_code);
        }
    }
    let mut batches = BTreeMap::new();
    for row in rows.iter().filter(|r| r.bin_code == bin) {
        let e = batches.entry(row.batch_code.clone()).or_insert(OracleBatch {
            expected: 0,
            counted: 0,
            missing: Vec::new(),
        });
        e.expected += 1;
        if scanned.contains(&row.hu_code.as_str()) {
            e.counted += 1;
        } else {
            e.missing.push(row.hu_code.clone());
        }
    }
    for b in batches.values_mut() {
        b.missing.sort();
    }
    let mut surplus: Vec<(String, Option<String>)> = scanned
        .iter()
        .filter(|hu| !rows.iter().any(|r| r.bin_code == bin && r.hu_code == **hu))
        .map(|hu| {
            let designated = rows.iter().find(|r| r.hu_code == *hu).map(|r| r.bin_code.clone());
            (hu.to_string(), designated)
        })
        .collect();
    surplus.sort();
    let complete = surplus.is_empty() && batches.values().all(|b| b.counted > 0);
    OracleBin {
        batches,
        surplus,
        complete,
    }
}

/// Projects a reconciliation onto the oracle's shape.
pub fn project(r: &BinReconciliation) -> OracleBin {
    OracleBin {
        batches: r
            .per_batch
            .iter()
            .map(|(b, t)| {
                (
                    b.clone(),
                    OracleBatch {
                        expected: t.expected_qty as usize,
                        counted: t.counted_qty as usize,
                        missing: t.missing_hu_codes.iter().cloned().collect(),
                    },
                )
            })
            .collect(),
        surplus: r
            .surplus
            .iter()
            .map(|s| (s.hu_code.clone(), s.designated_bin.clone()))
            .collect(),
        complete: r.complete,
    }
}

/// Conservation and per-bin accounting; returns a description of the first
/// violation.
pub fn conservation_violation(r: &BinReconciliation, scans: &[HandlingUnitRef]) -> Option<String> {
    for (b, t) in &r.per_batch {
        if t.counted_qty + t.shortage_qty != t.expected_qty {
            return Some(format!("{}/{b}: counted + shortage != expected", r.bin_code));
        }
        if t.missing_hu_codes.len() as u64 != t.shortage_qty {
            return Some(format!("{}/{b}: missing set size != shortage", r.bin_code));
        }
    }
    let unique: BTreeSet<&str> = scans.iter().map(|s| s.hu_code.as_str()).collect();
    if unique.len() as u64 != r.counted_qty() + r.surplus.len() as u64 {
        return Some(format!("{}: unique scans != counted + surplus", r.bin_code));
    }
    None
}

/// Cross-bin symmetry over a fully audited warehouse: every surplus unit with
/// a known designated bin is missing there unless it was also found there,
/// and every missing unit that was scanned anywhere shows up as surplus in
/// the bin where it was found.
pub fn symmetry_violation(recons: &BTreeMap<String, BinReconciliation>) -> Option<String> {
    let missing_at = |bin: &str, hu: &str| {
        recons[bin]
            .per_batch
            .values()
            .any(|t| t.missing_hu_codes.contains(hu))
    };
    let mut surplus_found: BTreeSet<&str> = BTreeSet::new();
    for (bin, r) in recons {
        for s in &r.surplus {
            surplus_found.insert(&s.hu_code);
            if let Some(d) = &s.designated_bin {
                if d == bin {
                    return Some(format!("{} is surplus in its own bin", s.hu_code));
                }
                if !missing_at(d, &s.hu_code) {
                    return Some(format!("{} surplus at {bin} but not missing at {d}", s.hu_code));
                }
            }
        }
    }
    for (bin, r) in recons {
        for t in r.per_batch.values() {
            for hu in &t.missing_hu_codes {
                let found_elsewhere = recons.iter().any(|(b, o)| b != bin && o.surplus.iter().any(|s| &s.hu_code == hu));
                if found_elsewhere != surplus_found.contains(hu.as_str()) {
                    return Some(format!("{hu} missing at {bin} disagrees with surplus rows"));
                }
            }
        }
    }
    None
}

pub const ADMIN: &str = "boss";

pub fn engine_with(warehouse: &Warehouse) -> (Engine, String) {
    let boss = Actor::admin(ADMIN);
    let mut e = Engine::new(Store::in_memory(), Credentials::default()).unwrap();
    e.import_reference(&boss, &reference_csv(&warehouse.rows), 0).unwrap();
    let sid = e.create_session(&boss, 0).unwrap().session_id;
    (e, sid)
}

#[derive(Debug, Clone)]
pub enum Op {
    Start { bin: String, operator: usize },
    Scan { bin: String, operator: usize, unit: HandlingUnitRef },
    Resend { index: usize },
    Ack { bin: String, operator: usize, hu: String, returned: bool },
    Signoff { bin: String, operator: usize, confirm: Vec<String> },
}

pub struct DriveOutcome {
    pub ops: usize,
    pub completed: usize,
    pub rejected_signoffs: usize,
    pub violations: Vec<String>,
}

fn operator(i: usize) -> Actor {
    Actor::operator(&format!("op{i}"))
}

/// Applies `steps` random operations against a fresh engine, checking after
/// each one that no task is COMPLETED unless its reconciliation is complete
/// and that task states only move forward.
pub fn drive_random_ops(rng: &mut impl Rng, warehouse: &Warehouse, steps: usize, operators: usize) -> DriveOutcome {
    let (mut e, sid) = engine_with(warehouse);
    let bins: Vec<String> = warehouse.reference.bin_codes().cloned().collect();
    let mut sent: Vec<(Actor, ScanRequest)> = Vec::new();
    let mut outcome = DriveOutcome {
        ops: 0,
        completed: 0,
        rejected_signoffs: 0,
        violations: Vec::new(),
    };
    let mut last_states: BTreeMap<String, TaskState> =
        bins.iter().map(|b| (b.clone(), TaskState::Pending)).collect();

    for step in 0..steps {
        let bin = bins.choose(rng).unwrap().clone();
        let who = rng.random_range(0..operators);
        let op = match rng.random_range(0..100) {
            0..10 => Op::Start { bin, operator: who },
            10..60 => {
                let pool = &warehouse.physical[&bin];
                match pool.choose(rng) {
                    Some(u) => Op::Scan {
                        bin,
                        operator: who,
                        unit: u.clone(),
                    },
                    None => Op::Start { bin, operator: who },
                }
            }
            60..70 if !sent.is_empty() => Op::Resend {
                index: rng.random_range(0..sent.len()),
            },
            70..82 => {
                let hu = warehouse.physical[&bin]
                    .choose(rng)
                    .map(|u| u.hu_code.clone())
                    .unwrap_or_default();
                Op::Ack {
                    bin,
                    operator: who,
                    hu,
                    returned: rng.random_bool(0.5),
                }
            }
            _ => {
                let batches: Vec<String> = warehouse.reference.bin(&bin).unwrap().keys().cloned().collect();
                let confirm = batches.into_iter().filter(|_| rng.random_bool(0.3)).collect();
                Op::Signoff {
                    bin,
                    operator: who,
                    confirm,
                }
            }
        };

        match op {
            Op::Start { bin, operator: o } => {
                let _ = e.start_bin_task(&operator(o), &sid, &bin, step as i64);
            }
            Op::Scan { bin, operator: o, unit } => {
                let req = ScanRequest {
                    session_id: sid.clone(),
                    bin_code: bin,
                    event_id: format!("ev{step}"),
                    payload: unit.to_string(),
                    at: step as i64,
                };
                if e.submit_scan(&operator(o), req.clone()).is_ok() {
                    sent.push((operator(o), req));
                }
            }
            Op::Resend { index } => {
                let (actor, req) = sent[index].clone();
                let before = e.store().last_seq();
                let first = e.state().clone();
                let _ = e.submit_scan(&actor, req);
                if e.store().last_seq() != before || *e.state() != first {
                    outcome.violations.push(format!("step {step}: resend changed state"));
                }
            }
            Op::Ack {
                bin,
                operator: o,
                hu,
                returned,
            } => {
                let _ = e.acknowledge_surplus(&operator(o), &sid, &bin, &hu, returned, step as i64);
            }
            Op::Signoff {
                bin,
                operator: o,
                confirm,
            } => match e.sign_off_bin(&operator(o), &sid, &bin, &confirm, step as i64) {
                Ok(_) => outcome.completed += 1,
                Err(StocktakeError::IncompleteBatchList(_)) => outcome.rejected_signoffs += 1,
                Err(_) => {}
            },
        }
        outcome.ops += 1;

        let session = e.state().session(&sid).unwrap();
        for (bin, task) in &session.bin_tasks {
            let prev = last_states[bin];
            if task.state < prev {
                outcome.violations.push(format!("step {step}: {bin} went from {prev:?} to {:?}", task.state));
            }
            last_states.insert(bin.clone(), task.state);
            if task.state == TaskState::Completed {
                let frozen_ok = task.frozen.as_ref().is_some_and(|f| f.complete);
                let live = stocktake_core::inventory::reconcile_bin_attested(
                    &session.reference,
                    bin,
                    &task.scanned_units(),
                    &task.attestations,
                )
                .unwrap();
                if !frozen_ok || !live.complete || task.signoff.is_none() {
                    outcome.violations.push(format!("step {step}: {bin} COMPLETED while incomplete"));
                }
            }
        }
    }

    if let Err(err) = replay_matches(&e) {
        outcome.violations.push(err);
    }
    outcome
}

pub fn replay_matches(e: &Engine) -> Result<(), String> {
    let replayed: State = stocktake_core::session::replay(e.store().entries()).map_err(|err| err.to_string())?;
    if &replayed == e.state() {
        Ok(())
    } else {
        Err("replayed state differs from live state".into())
    }
}
