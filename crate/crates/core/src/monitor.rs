//! Dashboard aggregates: task progress, discrepancies, operator activity and
//! completion-time statistics. Everything here is a pure function of session
//! state, so reports recomputed after replay are identical.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auth::OperatorId;
use crate::reference::{BatchCode, BinCode, HuCode};
use crate::session::{ActivityKind, StocktakeSession, TaskState};

pub const DEFAULT_IDLE_THRESHOLD_SECS: i64 = 600;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no durations to summarize")]
    EmptyInput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinProgress {
    pub bin_code: BinCode,
    pub state: TaskState,
    pub assigned_operator: Option<OperatorId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgressReport {
    pub session_id: String,
    pub total: usize,
    pub completed: usize,
    pub ongoing: usize,
    pub pending: usize,
    pub bins: Vec<BinProgress>,
}

pub fn progress(session: &StocktakeSession) -> ProgressReport {
    let bins: Vec<BinProgress> = session
        .bin_tasks
        .values()
        .map(|t| BinProgress {
            bin_code: t.bin_code.clone(),
            state: t.state,
            assigned_operator: t.assigned_operator.clone(),
        })
        .collect();
    let count = |s| bins.iter().filter(|b| b.state == s).count();
    ProgressReport {
        session_id: session.session_id.clone(),
        total: bins.len(),
        completed: count(TaskState::Completed),
        ongoing: count(TaskState::Ongoing),
        pending: count(TaskState::Pending),
        bins,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurplusRow {
    pub hu_code: HuCode,
    pub found_bin: BinCode,
    pub designated_bin: Option<BinCode>,
    pub acknowledged: bool,
    pub returned: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortageUnit {
    pub hu_code: HuCode,
    pub bin_code: BinCode,
    pub batch_code: BatchCode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub surplus_units: Vec<SurplusRow>,
    pub shortage_by_batch: BTreeMap<BatchCode, u64>,
    pub shortage_units: Vec<ShortageUnit>,
}

impl DiscrepancyReport {
    pub fn is_empty(&self) -> bool {
        self.surplus_units.is_empty() && self.shortage_units.is_empty()
    }
}

/// Aggregates over bins that have been started; pending bins have no counts
/// yet and would otherwise report their whole content as missing.
pub fn discrepancies(session: &StocktakeSession) -> DiscrepancyReport {
    let mut report = DiscrepancyReport::default();
    for task in session.bin_tasks.values() {
        if task.state == TaskState::Pending {
            continue;
        }
        let r = task.reconciliation(&session.reference);
        for s in &r.surplus {
            report.surplus_units.push(SurplusRow {
                hu_code: s.hu_code.clone(),
                found_bin: task.bin_code.clone(),
                designated_bin: s.designated_bin.clone(),
                acknowledged: s.acknowledged,
                returned: s.returned,
            });
        }
        for (batch, tally) in &r.per_batch {
            if tally.shortage_qty > 0 {
                *report.shortage_by_batch.entry(batch.clone()).or_default() += tally.shortage_qty;
            }
            for hu in &tally.missing_hu_codes {
                report.shortage_units.push(ShortageUnit {
                    hu_code: hu.clone(),
                    bin_code: task.bin_code.clone(),
                    batch_code: batch.clone(),
                });
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub at: i64,
    pub seq: u64,
    pub bin_code: BinCode,
    pub kind: ActivityKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdleGap {
    pub operator_id: OperatorId,
    pub start: i64,
    pub seconds: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityTimeline {
    pub operators: BTreeMap<OperatorId, Vec<TimelineEvent>>,
    pub idle_gaps: Vec<IdleGap>,
}

/// Per-operator events ordered by time, with every gap strictly longer than
/// `idle_threshold` seconds flagged.
pub fn activity(session: &StocktakeSession, idle_threshold: i64) -> ActivityTimeline {
    let mut timeline = ActivityTimeline::default();
    for e in &session.activity {
        timeline
            .operators
            .entry(e.operator_id.clone())
            .or_default()
            .push(TimelineEvent {
                at: e.at,
                seq: e.seq,
                bin_code: e.bin_code.clone(),
                kind: e.kind,
            });
    }
    for (operator, events) in timeline.operators.iter_mut() {
        events.sort_by_key(|e| (e.at, e.seq));
        for w in events.windows(2) {
            let gap = w[1].at - w[0].at;
            if gap > idle_threshold {
                timeline.idle_gaps.push(IdleGap {
                    operator_id: operator.clone(),
                    start: w[0].at,
                    seconds: gap,
                });
            }
        }
    }
    timeline
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinDuration {
    pub bin_code: BinCode,
    pub operator_id: OperatorId,
    pub seconds: i64,
}

/// Start-to-sign-off seconds for every completed bin.
pub fn bin_durations(session: &StocktakeSession) -> Vec<BinDuration> {
    session
        .bin_tasks
        .values()
        .filter_map(|t| {
            let signoff = t.signoff.as_ref()?;
            Some(BinDuration {
                bin_code: t.bin_code.clone(),
                operator_id: signoff.operator_id.clone(),
                seconds: signoff.at - t.started_at?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionStats {
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation (divides by n).
    pub sd: f64,
}

pub fn completion_stats(durations: &[f64]) -> Result<CompletionStats, StatsError> {
    if durations.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n = durations.len() as f64;
    let mean = durations.iter().sum::<f64>() / n;
    let mut sorted = durations.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len().is_multiple_of(2) {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    } else {
        sorted[mid]
    };
    let var = durations.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    Ok(CompletionStats {
        mean,
        median,
        sd: var.sqrt(),
    })
}

fn to_csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to vec");
    for row in rows {
        w.write_record(row).expect("write to vec");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv output is utf-8")
}

fn state_label(s: TaskState) -> &'static str {
    match s {
        TaskState::Pending => "PENDING",
        TaskState::Ongoing => "ONGOING",
        TaskState::Completed => "COMPLETED",
    }
}

fn kind_label(k: ActivityKind) -> &'static str {
    match k {
        ActivityKind::TaskStart => "TASK_START",
        ActivityKind::Scan => "SCAN",
        ActivityKind::SurplusAck => "SURPLUS_ACK",
        ActivityKind::Signoff => "SIGNOFF",
    }
}

pub fn progress_csv(report: &ProgressReport) -> String {
    to_csv(
        &["bin_code", "state", "assigned_operator"],
        report.bins.iter().map(|b| {
            [
                b.bin_code.clone(),
                state_label(b.state).to_string(),
                b.assigned_operator.clone().unwrap_or_default(),
            ]
        }),
    )
}

/// Surplus and shortage rows in one table, told apart by `kind`.
pub fn discrepancies_csv(report: &DiscrepancyReport) -> String {
    let surplus = report.surplus_units.iter().map(|s| {
        [
            "SURPLUS".to_string(),
            s.hu_code.clone(),
            s.found_bin.clone(),
            s.designated_bin.clone().unwrap_or_default(),
            String::new(),
            s.acknowledged.to_string(),
            s.returned.to_string(),
        ]
    });
    let shortage = report.shortage_units.iter().map(|s| {
        [
            "SHORTAGE".to_string(),
            s.hu_code.clone(),
            String::new(),
            s.bin_code.clone(),
            s.batch_code.clone(),
            String::new(),
            String::new(),
        ]
    });
    to_csv(
        &["kind", "hu_code", "found_bin", "designated_bin", "batch_code", "acknowledged", "returned"],
        surplus.chain(shortage),
    )
}

pub fn activity_csv(timeline: &ActivityTimeline) -> String {
    to_csv(
        &["operator_id", "at", "seq", "bin_code", "kind"],
        timeline.operators.iter().flat_map(|(op, events)| {
            events.iter().map(move |e| {
                [
                    op.clone(),
                    e.at.to_string(),
                    e.seq.to_string(),
                    e.bin_code.clone(),
                    kind_label(e.kind).to_string(),
                ]
            })
        }),
    )
}

pub fn idle_gaps_csv(timeline: &ActivityTimeline) -> String {
    to_csv(
        &["operator_id", "start", "seconds"],
        timeline
            .idle_gaps
            .iter()
            .map(|g| [g.operator_id.clone(), g.start.to_string(), g.seconds.to_string()]),
    )
}

pub fn durations_csv(durations: &[BinDuration]) -> String {
    to_csv(
        &["bin_code", "operator_id", "seconds"],
        durations
            .iter()
            .map(|d| [d.bin_code.clone(), d.operator_id.clone(), d.seconds.to_string()]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::{Actor, Credentials};
    use crate::session::{Engine, ScanRequest};
    use crate::store::Store;

    const CSV: &[u8] = b"bin_code,batch_code,hu_code,category,shelved_at_unix\n\
        B1,X,H1,A,0\nB1,X,H2,A,0\nB2,Y,K1,B,0\nB3,Z,Z1,C,0\nB4,Z,Z2,C,0\nB5,W,W1,A,0\n";

    fn engine() -> (Engine, String) {
        let boss = Actor::admin("boss");
        let mut e = Engine::new(Store::in_memory(), Credentials::default()).unwrap();
        e.import_reference(&boss, CSV, 0).unwrap();
        let sid = e.create_session(&boss, 0).unwrap().session_id;
        (e, sid)
    }

    fn scan(e: &mut Engine, who: &Actor, sid: &str, bin: &str, hu: &str, at: i64) {
        e.submit_scan(
            who,
            ScanRequest {
                session_id: sid.into(),
                bin_code: bin.into(),
                event_id: format!("{bin}-{hu}-{at}"),
                payload: format!("{bin}|Q|{hu}"),
                at,
            },
        )
        .unwrap();
    }

    #[test]
    fn progress_counts() {
        let (mut e, sid) = engine();
        let p = progress(e.state().session(&sid).unwrap());
        assert_eq!((p.completed, p.ongoing, p.pending), (0, 0, 5));

        let alice = Actor::operator("alice");
        for bin in ["B1", "B2", "B3", "B4", "B5"] {
            e.start_bin_task(&alice, &sid, bin, 1).unwrap();
            e.sign_off_bin(&alice, &sid, bin, &["X".into(), "Y".into(), "Z".into(), "W".into()], 2)
                .unwrap();
        }
        let p = progress(e.state().session(&sid).unwrap());
        assert_eq!((p.completed, p.ongoing, p.pending), (5, 0, 0));
    }

    #[test]
    fn misplacement_gives_matching_surplus_and_shortage() {
        let (mut e, sid) = engine();
        let alice = Actor::operator("alice");
        e.start_bin_task(&alice, &sid, "B1", 1).unwrap();
        scan(&mut e, &alice, &sid, "B1", "H1", 2);
        scan(&mut e, &alice, &sid, "B1", "H2", 3);
        scan(&mut e, &alice, &sid, "B1", "K1", 4);
        e.start_bin_task(&alice, &sid, "B2", 5).unwrap();

        let d = discrepancies(e.state().session(&sid).unwrap());
        assert_eq!(d.surplus_units.len(), 1);
        assert_eq!(d.surplus_units[0].designated_bin.as_deref(), Some("B2"));
        assert_eq!(d.shortage_units, vec![ShortageUnit {
            hu_code: "K1".into(),
            bin_code: "B2".into(),
            batch_code: "Y".into(),
        }]);
        assert_eq!(d.shortage_by_batch.get("Y"), Some(&1));
        assert!(!d.surplus_units[0].returned);

        e.acknowledge_surplus(&alice, &sid, "B1", "K1", true, 6).unwrap();
        let d = discrepancies(e.state().session(&sid).unwrap());
        assert!(d.surplus_units[0].acknowledged && d.surplus_units[0].returned);
        assert!(discrepancies_csv(&d).contains("SURPLUS,K1,B1,B2,,true,true"));
    }

    #[test]
    fn perfect_count_is_empty() {
        let (mut e, sid) = engine();
        let alice = Actor::operator("alice");
        e.start_bin_task(&alice, &sid, "B1", 1).unwrap();
        scan(&mut e, &alice, &sid, "B1", "H1", 2);
        scan(&mut e, &alice, &sid, "B1", "H2", 3);
        assert!(discrepancies(e.state().session(&sid).unwrap()).is_empty());
    }

    #[test]
    fn idle_gap_arithmetic() {
        let (mut e, sid) = engine();
        let t = activity(e.state().session(&sid).unwrap(), 600);
        assert!(t.operators.is_empty() && t.idle_gaps.is_empty());

        let alice = Actor::operator("alice");
        e.start_bin_task(&alice, &sid, "B1", 0).unwrap();
        scan(&mut e, &alice, &sid, "B1", "H1", 5);
        scan(&mut e, &alice, &sid, "B1", "H2", 1000);
        let t = activity(e.state().session(&sid).unwrap(), 600);
        assert_eq!(t.idle_gaps, vec![IdleGap {
            operator_id: "alice".into(),
            start: 5,
            seconds: 995,
        }]);
        assert_eq!(t.operators["alice"].len(), 3);
        assert!(activity(e.state().session(&sid).unwrap(), 995).idle_gaps.is_empty());
    }

    #[test]
    fn stats_examples() {
        let s = completion_stats(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]).unwrap();
        assert_eq!((s.mean, s.median, s.sd), (5.0, 4.5, 2.0));
        let s = completion_stats(&[7.0]).unwrap();
        assert_eq!((s.mean, s.median, s.sd), (7.0, 7.0, 0.0));
        let s = completion_stats(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.median), (2.0, 2.0));
        assert_eq!(completion_stats(&[]), Err(StatsError::EmptyInput));
    }

    #[test]
    fn durations_from_signoff() {
        let (mut e, sid) = engine();
        let alice = Actor::operator("alice");
        e.start_bin_task(&alice, &sid, "B5", 100).unwrap();
        scan(&mut e, &alice, &sid, "B5", "W1", 150);
        e.sign_off_bin(&alice, &sid, "B5", &[], 260).unwrap();
        let d = bin_durations(e.state().session(&sid).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].seconds, 160);
        assert_eq!(durations_csv(&d), "bin_code,operator_id,seconds\nB5,alice,160\n");
    }
}
