//! Stocktake sessions, bin tasks and the event-sourced engine.
//!
//! [`State`] is a pure fold over log entries: [`State::apply`] validates an
//! entry against the current state and mutates it. [`Engine`] adds
//! credentials and role rules on top, builds the entry for each request,
//! appends it to the [`Store`] and only then applies it. Replaying the log
//! through [`replay`] therefore rebuilds exactly the live state.
//!
//! Sign-off gating: a bin can be signed off only when every expected batch
//! is listed (at least one unit scanned, or the whole batch confirmed
//! absent in the sign-off request) and every surplus unit has been
//! acknowledged. Partial shortages are the residual and need no
//! confirmation.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::archive::ArchiveBundle;
use crate::auth::{Actor, Credentials, OperatorId};
use crate::events::{ClearScope, Event};
use crate::inventory::{
    classify_scan, parse_qr, reconcile_bin_attested, Attestations, BinReconciliation, Blockers,
    Classification, HandlingUnitRef, QrError,
};
use crate::reference::{
    import_reference_csv, BatchCode, BinCode, HuCode, ImportError, ReferenceInventory,
    ReferenceSummary,
};
use crate::store::{LogEntry, StorageError, StoredEntry, Store};

#[derive(Debug, Error)]
pub enum StocktakeError {
    #[error("unknown token")]
    UnknownToken,
    #[error("forbidden: {0} requires the ADMIN role")]
    Forbidden(&'static str),
    #[error("no reference inventory loaded")]
    NoReferenceLoaded,
    #[error("a stocktake session is in progress")]
    SessionInProgress,
    #[error(transparent)]
    Import(#[from] ImportError),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown bin {0}")]
    UnknownBin(BinCode),
    #[error("unknown archive {0}")]
    UnknownArchive(String),
    #[error("bin {bin} already started by {operator}")]
    AlreadyStarted { bin: BinCode, operator: OperatorId },
    #[error("bin {0} has not been started")]
    TaskNotStarted(BinCode),
    #[error("bin {0} is assigned to another operator")]
    NotAssigned(BinCode),
    #[error("session {0} is archived")]
    SessionArchived(String),
    #[error("bin {0} is already signed off")]
    TaskCompleted(BinCode),
    #[error("invalid scan payload: {0}")]
    Parse(#[from] QrError),
    #[error("event id {0} was already used for a different scan")]
    EventIdConflict(String),
    #[error("{0} is not a surplus unit of this bin")]
    NotSurplus(HuCode),
    #[error(
        "bin cannot be signed off: unlisted batches {:?}, unacknowledged surplus {:?}",
        .0.blocking_batches,
        .0.unacknowledged_surplus
    )]
    IncompleteBatchList(Blockers),
    #[error("{0} bin tasks are not completed")]
    TasksRemaining(usize),
    #[error("session {0} is not archived")]
    NotArchived(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

#[derive(Debug, Error)]
#[error("replay failed at seq {seq}: {reason}")]
pub struct ReplayError {
    pub seq: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    Open,
    Archived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskState {
    Pending,
    Ongoing,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignoffRecord {
    pub operator_id: OperatorId,
    pub at: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub seq: u64,
    pub event_id: String,
    pub at: i64,
    pub unit: HandlingUnitRef,
    pub classification: Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ActivityKind {
    TaskStart,
    Scan,
    SurplusAck,
    Signoff,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub seq: u64,
    pub at: i64,
    pub operator_id: OperatorId,
    pub bin_code: BinCode,
    pub kind: ActivityKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinTask {
    pub bin_code: BinCode,
    pub state: TaskState,
    pub assigned_operator: Option<OperatorId>,
    pub signoff: Option<SignoffRecord>,
    pub started_at: Option<i64>,
    pub scans: Vec<ScanRecord>,
    pub attestations: Attestations,
    /// Reconciliation frozen at sign-off.
    pub frozen: Option<BinReconciliation>,
    seen: BTreeSet<HuCode>,
}

/// The externally visible part of a task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinTaskView {
    pub bin_code: BinCode,
    pub state: TaskState,
    pub assigned_operator: Option<OperatorId>,
    pub signoff: Option<SignoffRecord>,
    pub started_at: Option<i64>,
    pub scan_count: usize,
}

impl BinTask {
    fn new(bin_code: BinCode) -> Self {
        BinTask {
            bin_code,
            state: TaskState::Pending,
            assigned_operator: None,
            signoff: None,
            started_at: None,
            scans: Vec::new(),
            attestations: Attestations::default(),
            frozen: None,
            seen: BTreeSet::new(),
        }
    }

    pub fn view(&self) -> BinTaskView {
        BinTaskView {
            bin_code: self.bin_code.clone(),
            state: self.state,
            assigned_operator: self.assigned_operator.clone(),
            signoff: self.signoff.clone(),
            started_at: self.started_at,
            scan_count: self.scans.len(),
        }
    }

    pub fn scanned_units(&self) -> Vec<HandlingUnitRef> {
        self.scans.iter().map(|s| s.unit.clone()).collect()
    }

    /// Frozen result for completed tasks, live reconciliation otherwise.
    pub fn reconciliation(&self, reference: &ReferenceInventory) -> BinReconciliation {
        if let Some(frozen) = &self.frozen {
            return frozen.clone();
        }
        reconcile_bin_attested(reference, &self.bin_code, &self.scanned_units(), &self.attestations)
            .expect("task bins come from the reference")
    }

    fn is_surplus(&self, reference: &ReferenceInventory, hu: &str) -> bool {
        self.seen.contains(hu)
            && reference
                .placement(hu)
                .is_none_or(|p| p.bin_code != self.bin_code)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StocktakeSession {
    pub session_id: String,
    pub created_at: i64,
    pub created_seq: u64,
    /// Seq of the reference import the session counts against.
    pub reference_seq: u64,
    pub reference: Arc<ReferenceInventory>,
    pub state: SessionState,
    pub bin_tasks: BTreeMap<BinCode, BinTask>,
    pub activity: Vec<ActivityEvent>,
    pub archive_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub created_at: i64,
    pub state: SessionState,
    pub bins: usize,
    pub archive_id: Option<String>,
}

impl StocktakeSession {
    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            session_id: self.session_id.clone(),
            created_at: self.created_at,
            state: self.state,
            bins: self.bin_tasks.len(),
            archive_id: self.archive_id.clone(),
        }
    }

    pub fn task(&self, bin: &str) -> Result<&BinTask, StocktakeError> {
        self.bin_tasks
            .get(bin)
            .ok_or_else(|| StocktakeError::UnknownBin(bin.to_string()))
    }

    pub fn reconciliation(&self, bin: &str) -> Result<BinReconciliation, StocktakeError> {
        Ok(self.task(bin)?.reconciliation(&self.reference))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchiveRecord {
    pub archive_id: String,
    pub session_id: String,
    pub first_seq: u64,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ScanKey {
    session_id: String,
    bin_code: BinCode,
    payload: String,
    classification: Classification,
}

/// Everything derived from the log.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct State {
    reference: Option<Arc<ReferenceInventory>>,
    reference_seq: Option<u64>,
    sessions: BTreeMap<String, StocktakeSession>,
    archives: BTreeMap<String, ArchiveRecord>,
    scan_index: HashMap<String, ScanKey>,
    last_seq: u64,
}

impl State {
    pub fn reference(&self) -> Option<&Arc<ReferenceInventory>> {
        self.reference.as_ref()
    }

    pub fn sessions(&self) -> &BTreeMap<String, StocktakeSession> {
        &self.sessions
    }

    pub fn session(&self, id: &str) -> Result<&StocktakeSession, StocktakeError> {
        self.sessions
            .get(id)
            .ok_or_else(|| StocktakeError::UnknownSession(id.to_string()))
    }

    pub fn archives(&self) -> &BTreeMap<String, ArchiveRecord> {
        &self.archives
    }

    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn open_session(&self) -> Option<&StocktakeSession> {
        self.sessions.values().find(|s| s.state == SessionState::Open)
    }

    fn open_session_mut(
        &mut self,
        id: &str,
    ) -> Result<&mut StocktakeSession, StocktakeError> {
        let session = self
            .sessions
            .get_mut(id)
            .ok_or_else(|| StocktakeError::UnknownSession(id.to_string()))?;
        if session.state == SessionState::Archived {
            return Err(StocktakeError::SessionArchived(id.to_string()));
        }
        Ok(session)
    }

    /// Looks up an ongoing task in an open session.
    fn ongoing_task(
        &self,
        session_id: &str,
        bin: &str,
    ) -> Result<&BinTask, StocktakeError> {
        let session = self.session(session_id)?;
        if session.state == SessionState::Archived {
            return Err(StocktakeError::SessionArchived(session_id.to_string()));
        }
        let task = session.task(bin)?;
        match task.state {
            TaskState::Pending => Err(StocktakeError::TaskNotStarted(bin.to_string())),
            TaskState::Completed => Err(StocktakeError::TaskCompleted(bin.to_string())),
            TaskState::Ongoing => Ok(task),
        }
    }

    /// Validates an entry against the current state and applies it.
    pub fn apply(&mut self, entry: &LogEntry) -> Result<(), StocktakeError> {
        if entry.seq != self.last_seq + 1 && self.last_seq != 0 {
            return Err(StocktakeError::Invalid(format!(
                "expected seq {}, found {}",
                self.last_seq + 1,
                entry.seq
            )));
        }
        let actor = entry.actor.as_str();
        let at = entry.at;
        let seq = entry.seq;

        match &entry.event {
            Event::ReferenceImport { rows } => {
                if self.open_session().is_some() {
                    return Err(StocktakeError::SessionInProgress);
                }
                let inventory = ReferenceInventory::from_rows(rows.clone())?;
                self.reference = Some(Arc::new(inventory));
                self.reference_seq = Some(seq);
            }
            Event::SessionCreate { session_id } => {
                let reference = self.reference.clone().ok_or(StocktakeError::NoReferenceLoaded)?;
                if self.open_session().is_some() {
                    return Err(StocktakeError::SessionInProgress);
                }
                if self.sessions.contains_key(session_id) {
                    return Err(StocktakeError::Invalid(format!(
                        "session {session_id} already exists"
                    )));
                }
                let bin_tasks = reference
                    .bin_codes()
                    .map(|b| (b.clone(), BinTask::new(b.clone())))
                    .collect();
                self.sessions.insert(
                    session_id.clone(),
                    StocktakeSession {
                        session_id: session_id.clone(),
                        created_at: at,
                        created_seq: seq,
                        reference_seq: self.reference_seq.unwrap_or(seq),
                        reference,
                        state: SessionState::Open,
                        bin_tasks,
                        activity: Vec::new(),
                        archive_id: None,
                    },
                );
            }
            Event::TaskStart {
                session_id,
                bin_code,
            } => {
                let session = self.open_session_mut(session_id)?;
                let task = session
                    .bin_tasks
                    .get_mut(bin_code)
                    .ok_or_else(|| StocktakeError::UnknownBin(bin_code.clone()))?;
                match task.state {
                    TaskState::Pending => {}
                    TaskState::Ongoing => {
                        return Err(StocktakeError::AlreadyStarted {
                            bin: bin_code.clone(),
                            operator: task.assigned_operator.clone().unwrap_or_default(),
                        })
                    }
                    TaskState::Completed => {
                        return Err(StocktakeError::TaskCompleted(bin_code.clone()))
                    }
                }
                task.state = TaskState::Ongoing;
                task.assigned_operator = Some(actor.to_string());
                task.started_at = Some(at);
                session.activity.push(activity(entry, bin_code, ActivityKind::TaskStart));
            }
            Event::Scan {
                session_id,
                bin_code,
                event_id,
                payload,
                classification,
            } => {
                if self.scan_index.contains_key(event_id) {
                    return Err(StocktakeError::EventIdConflict(event_id.clone()));
                }
                let task = self.ongoing_task(session_id, bin_code)?;
                if task.assigned_operator.as_deref() != Some(actor) {
                    return Err(StocktakeError::NotAssigned(bin_code.clone()));
                }
                let unit = parse_qr(payload)?;
                let session = self.session(session_id)?;
                let computed = classify_scan(&session.reference, &task.seen, &unit, bin_code)
                    .map_err(|e| StocktakeError::UnknownBin(e.0))?;
                if &computed != classification {
                    return Err(StocktakeError::Invalid(format!(
                        "recorded classification {} does not match computed {}",
                        classification.label(),
                        computed.label()
                    )));
                }

                self.scan_index.insert(
                    event_id.clone(),
                    ScanKey {
                        session_id: session_id.clone(),
                        bin_code: bin_code.clone(),
                        payload: payload.clone(),
                        classification: computed.clone(),
                    },
                );
                let session = self.sessions.get_mut(session_id).unwrap();
                let task = session.bin_tasks.get_mut(bin_code).unwrap();
                task.seen.insert(unit.hu_code.clone());
                task.scans.push(ScanRecord {
                    seq,
                    event_id: event_id.clone(),
                    at,
                    unit,
                    classification: computed,
                });
                session.activity.push(activity(entry, bin_code, ActivityKind::Scan));
            }
            Event::SurplusAck {
                session_id,
                bin_code,
                hu_code,
                returned,
            } => {
                let task = self.ongoing_task(session_id, bin_code)?;
                let session = self.session(session_id)?;
                if !task.is_surplus(&session.reference, hu_code) {
                    return Err(StocktakeError::NotSurplus(hu_code.clone()));
                }
                let session = self.sessions.get_mut(session_id).unwrap();
                let task = session.bin_tasks.get_mut(bin_code).unwrap();
                let flag = task
                    .attestations
                    .acknowledged
                    .entry(hu_code.clone())
                    .or_insert(false);
                *flag |= *returned;
                session.activity.push(activity(entry, bin_code, ActivityKind::SurplusAck));
            }
            Event::Signoff {
                session_id,
                bin_code,
                confirmed_missing,
            } => {
                let task = self.ongoing_task(session_id, bin_code)?;
                if task.assigned_operator.as_deref() != Some(actor) {
                    return Err(StocktakeError::NotAssigned(bin_code.clone()));
                }
                let session = self.session(session_id)?;
                let mut attestations = task.attestations.clone();
                attestations
                    .confirmed_missing
                    .extend(confirmed_missing.iter().cloned());
                let recon = reconcile_bin_attested(
                    &session.reference,
                    bin_code,
                    &task.scanned_units(),
                    &attestations,
                )
                .map_err(|e| StocktakeError::UnknownBin(e.0))?;
                if !recon.complete {
                    return Err(StocktakeError::IncompleteBatchList(recon.blockers()));
                }

                let session = self.sessions.get_mut(session_id).unwrap();
                let task = session.bin_tasks.get_mut(bin_code).unwrap();
                task.attestations = attestations;
                task.state = TaskState::Completed;
                task.signoff = Some(SignoffRecord {
                    operator_id: actor.to_string(),
                    at,
                });
                task.frozen = Some(recon);
                session.activity.push(activity(entry, bin_code, ActivityKind::Signoff));
            }
            Event::Archive {
                session_id,
                archive_id,
            } => {
                if self.archives.contains_key(archive_id) {
                    return Err(StocktakeError::Invalid(format!(
                        "archive {archive_id} already exists"
                    )));
                }
                let session = self.open_session_mut(session_id)?;
                let remaining = session
                    .bin_tasks
                    .values()
                    .filter(|t| t.state != TaskState::Completed)
                    .count();
                if remaining > 0 {
                    return Err(StocktakeError::TasksRemaining(remaining));
                }
                session.state = SessionState::Archived;
                session.archive_id = Some(archive_id.clone());
                let first_seq = session.reference_seq;
                self.archives.insert(
                    archive_id.clone(),
                    ArchiveRecord {
                        archive_id: archive_id.clone(),
                        session_id: session_id.clone(),
                        first_seq,
                        last_seq: seq,
                    },
                );
            }
            Event::Clear { scope } => match scope {
                ClearScope::Reference => {
                    if self.open_session().is_some() {
                        return Err(StocktakeError::SessionInProgress);
                    }
                    self.reference = None;
                    self.reference_seq = None;
                }
                ClearScope::History => {
                    let archived: BTreeSet<String> = self
                        .sessions
                        .iter()
                        .filter(|(_, s)| s.state == SessionState::Archived)
                        .map(|(id, _)| id.clone())
                        .collect();
                    self.sessions.retain(|id, _| !archived.contains(id));
                    self.archives.clear();
                    self.scan_index
                        .retain(|_, key| !archived.contains(&key.session_id));
                }
            },
        }
        self.last_seq = seq;
        Ok(())
    }
}

fn activity(entry: &LogEntry, bin: &str, kind: ActivityKind) -> ActivityEvent {
    ActivityEvent {
        seq: entry.seq,
        at: entry.at,
        operator_id: entry.actor.clone(),
        bin_code: bin.to_string(),
        kind,
    }
}

/// Folds entries into a fresh state.
pub fn replay(entries: &[StoredEntry]) -> Result<State, ReplayError> {
    let mut state = State::default();
    replay_onto(&mut state, entries)?;
    Ok(state)
}

pub fn replay_onto(state: &mut State, entries: &[StoredEntry]) -> Result<(), ReplayError> {
    for stored in entries {
        state.apply(&stored.entry).map_err(|e| ReplayError {
            seq: stored.entry.seq,
            reason: e.to_string(),
        })?;
    }
    Ok(())
}

/// Scan request as delivered by a terminal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRequest {
    pub session_id: String,
    pub bin_code: BinCode,
    pub event_id: String,
    pub payload: String,
    pub at: i64,
}

/// Result of a surplus acknowledgment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurplusAckView {
    pub bin_code: BinCode,
    pub hu_code: HuCode,
    pub acknowledged: bool,
    pub returned: bool,
}

/// Session state plus credentials and the durable log.
pub struct Engine {
    state: State,
    store: Store,
    credentials: Credentials,
    archive_root: Option<PathBuf>,
}

impl Engine {
    /// Rebuilds state from everything already in `store`.
    pub fn new(store: Store, credentials: Credentials) -> Result<Engine, StocktakeError> {
        let state = replay(store.entries())?;
        Ok(Engine {
            state,
            store,
            credentials,
            archive_root: None,
        })
    }

    /// Archive bundles are written under `root/<archive_id>/` when set.
    pub fn with_archive_root(mut self, root: PathBuf) -> Self {
        self.archive_root = Some(root);
        self
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn authenticate(&self, token: &str) -> Result<Actor, StocktakeError> {
        self.credentials
            .resolve(token)
            .cloned()
            .ok_or(StocktakeError::UnknownToken)
    }

    fn commit(&mut self, event: Event, actor: &Actor, at: i64) -> Result<u64, StocktakeError> {
        // Nothing reaches the log unless it would apply cleanly.
        let probe = LogEntry {
            seq: self.store.next_seq(),
            at,
            actor: actor.operator_id.clone(),
            prev_hash: String::new(),
            event,
        };
        self.check(&probe)?;
        let stored = self.store.append(probe.event, &actor.operator_id, at)?;
        let seq = stored.entry.seq;
        self.state
            .apply(&stored.entry)
            .expect("entry validated before append");
        Ok(seq)
    }

    // Dry-run validation. Cloning the whole state would be too slow for
    // scans, so each event kind is checked against a borrowed view.
    fn check(&self, entry: &LogEntry) -> Result<(), StocktakeError> {
        let s = &self.state;
        match &entry.event {
            Event::ReferenceImport { .. } | Event::Clear { scope: ClearScope::Reference } => {
                if s.open_session().is_some() {
                    return Err(StocktakeError::SessionInProgress);
                }
            }
            Event::SessionCreate { .. } => {
                if s.reference.is_none() {
                    return Err(StocktakeError::NoReferenceLoaded);
                }
                if s.open_session().is_some() {
                    return Err(StocktakeError::SessionInProgress);
                }
            }
            Event::TaskStart {
                session_id,
                bin_code,
            } => {
                let session = s.session(session_id)?;
                if session.state == SessionState::Archived {
                    return Err(StocktakeError::SessionArchived(session_id.clone()));
                }
                let task = session.task(bin_code)?;
                match task.state {
                    TaskState::Pending => {}
                    TaskState::Ongoing => {
                        return Err(StocktakeError::AlreadyStarted {
                            bin: bin_code.clone(),
                            operator: task.assigned_operator.clone().unwrap_or_default(),
                        })
                    }
                    TaskState::Completed => {
                        return Err(StocktakeError::TaskCompleted(bin_code.clone()))
                    }
                }
            }
            Event::Scan { .. } => {}
            Event::SurplusAck {
                session_id,
                bin_code,
                hu_code,
                ..
            } => {
                let task = s.ongoing_task(session_id, bin_code)?;
                if !task.is_surplus(&s.session(session_id)?.reference, hu_code) {
                    return Err(StocktakeError::NotSurplus(hu_code.clone()));
                }
            }
            Event::Signoff {
                session_id,
                bin_code,
                confirmed_missing,
            } => {
                let task = s.ongoing_task(session_id, bin_code)?;
                let session = s.session(session_id)?;
                let mut attestations = task.attestations.clone();
                attestations
                    .confirmed_missing
                    .extend(confirmed_missing.iter().cloned());
                let recon = reconcile_bin_attested(
                    &session.reference,
                    bin_code,
                    &task.scanned_units(),
                    &attestations,
                )
                .map_err(|e| StocktakeError::UnknownBin(e.0))?;
                if !recon.complete {
                    return Err(StocktakeError::IncompleteBatchList(recon.blockers()));
                }
            }
            Event::Archive { session_id, .. } => {
                let session = s.session(session_id)?;
                if session.state == SessionState::Archived {
                    return Err(StocktakeError::SessionArchived(session_id.clone()));
                }
                let remaining = session
                    .bin_tasks
                    .values()
                    .filter(|t| t.state != TaskState::Completed)
                    .count();
                if remaining > 0 {
                    return Err(StocktakeError::TasksRemaining(remaining));
                }
            }
            Event::Clear { scope: ClearScope::History } => {}
        }
        Ok(())
    }

    fn require_admin(actor: &Actor, action: &'static str) -> Result<(), StocktakeError> {
        if actor.is_admin() {
            Ok(())
        } else {
            Err(StocktakeError::Forbidden(action))
        }
    }

    pub fn import_reference(
        &mut self,
        actor: &Actor,
        csv: &[u8],
        at: i64,
    ) -> Result<ReferenceSummary, StocktakeError> {
        Self::require_admin(actor, "import_reference")?;
        if self.state.open_session().is_some() {
            return Err(StocktakeError::SessionInProgress);
        }
        let inventory = import_reference_csv(csv)?;
        let summary = inventory.summary();
        self.commit(
            Event::ReferenceImport {
                rows: inventory.rows().to_vec(),
            },
            actor,
            at,
        )?;
        Ok(summary)
    }

    pub fn create_session(&mut self, actor: &Actor, at: i64) -> Result<SessionSummary, StocktakeError> {
        Self::require_admin(actor, "create_session")?;
        let session_id = format!("S{:06}", self.store.next_seq());
        self.commit(
            Event::SessionCreate {
                session_id: session_id.clone(),
            },
            actor,
            at,
        )?;
        Ok(self.state.session(&session_id)?.summary())
    }

    pub fn clear_data(&mut self, actor: &Actor, scope: ClearScope, at: i64) -> Result<(), StocktakeError> {
        Self::require_admin(actor, "clear_data")?;
        let archived: Vec<String> = self.state.archives.keys().cloned().collect();
        self.commit(Event::Clear { scope }, actor, at)?;
        if scope == ClearScope::History {
            if let Some(root) = &self.archive_root {
                for id in archived {
                    let dir = root.join(&id);
                    if dir.exists() {
                        if let Err(e) = std::fs::remove_dir_all(&dir) {
                            warn!(archive = %id, error = %e, "could not remove archive bundle");
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn start_bin_task(
        &mut self,
        actor: &Actor,
        session_id: &str,
        bin: &str,
        at: i64,
    ) -> Result<BinTaskView, StocktakeError> {
        self.commit(
            Event::TaskStart {
                session_id: session_id.to_string(),
                bin_code: bin.to_string(),
            },
            actor,
            at,
        )?;
        Ok(self.state.session(session_id)?.task(bin)?.view())
    }

    /// Records a scan exactly once per `event_id`. A re-delivered event
    /// returns the classification it got the first time.
    pub fn submit_scan(&mut self, actor: &Actor, req: ScanRequest) -> Result<Classification, StocktakeError> {
        if req.event_id.trim().is_empty() {
            return Err(StocktakeError::Invalid("event_id is required".into()));
        }
        if let Some(prev) = self.state.scan_index.get(&req.event_id) {
            if prev.session_id == req.session_id
                && prev.bin_code == req.bin_code
                && prev.payload == req.payload
            {
                return Ok(prev.classification.clone());
            }
            return Err(StocktakeError::EventIdConflict(req.event_id));
        }

        let task = self.state.ongoing_task(&req.session_id, &req.bin_code)?;
        if task.assigned_operator.as_deref() != Some(actor.operator_id.as_str()) {
            return Err(StocktakeError::NotAssigned(req.bin_code));
        }
        let unit = parse_qr(&req.payload)?;
        let reference = &self.state.session(&req.session_id)?.reference;
        let classification = classify_scan(reference, &task.seen, &unit, &req.bin_code)
            .map_err(|e| StocktakeError::UnknownBin(e.0))?;

        self.commit(
            Event::Scan {
                session_id: req.session_id,
                bin_code: req.bin_code,
                event_id: req.event_id,
                payload: req.payload,
                classification: classification.clone(),
            },
            actor,
            req.at,
        )?;
        Ok(classification)
    }

    /// Acknowledges a surplus unit found in `bin`. Re-acknowledging is a
    /// no-op unless it newly sets the returned flag.
    pub fn acknowledge_surplus(
        &mut self,
        actor: &Actor,
        session_id: &str,
        bin: &str,
        hu_code: &str,
        returned: bool,
        at: i64,
    ) -> Result<SurplusAckView, StocktakeError> {
        let task = self.state.ongoing_task(session_id, bin)?;
        if !actor.is_admin() && task.assigned_operator.as_deref() != Some(actor.operator_id.as_str()) {
            return Err(StocktakeError::NotAssigned(bin.to_string()));
        }
        let existing = task.attestations.acknowledged.get(hu_code).copied();
        let already = matches!(existing, Some(prev) if prev || !returned);
        if !already {
            self.commit(
                Event::SurplusAck {
                    session_id: session_id.to_string(),
                    bin_code: bin.to_string(),
                    hu_code: hu_code.to_string(),
                    returned,
                },
                actor,
                at,
            )?;
        }
        let task = self.state.session(session_id)?.task(bin)?;
        Ok(SurplusAckView {
            bin_code: bin.to_string(),
            hu_code: hu_code.to_string(),
            acknowledged: true,
            returned: task.attestations.acknowledged[hu_code],
        })
    }

    /// Signs off a bin. `confirm_missing` lists batches the operator
    /// attests are entirely absent; only batches with no scanned unit need
    /// it.
    pub fn sign_off_bin(
        &mut self,
        actor: &Actor,
        session_id: &str,
        bin: &str,
        confirm_missing: &[BatchCode],
        at: i64,
    ) -> Result<BinReconciliation, StocktakeError> {
        let task = self.state.ongoing_task(session_id, bin)?;
        if task.assigned_operator.as_deref() != Some(actor.operator_id.as_str()) {
            return Err(StocktakeError::NotAssigned(bin.to_string()));
        }
        let session = self.state.session(session_id)?;
        let expected = session.reference.bin(bin).expect("task bins come from the reference");
        let confirmed: BTreeSet<BatchCode> = confirm_missing
            .iter()
            .filter(|b| expected.contains_key(b.as_str()))
            .cloned()
            .collect();
        self.commit(
            Event::Signoff {
                session_id: session_id.to_string(),
                bin_code: bin.to_string(),
                confirmed_missing: confirmed.into_iter().collect(),
            },
            actor,
            at,
        )?;
        self.state.session(session_id)?.reconciliation(bin)
    }

    pub fn archive_session(&mut self, actor: &Actor, session_id: &str, at: i64) -> Result<String, StocktakeError> {
        Self::require_admin(actor, "archive_session")?;
        let archive_id = format!("A{:06}", self.store.next_seq());
        self.commit(
            Event::Archive {
                session_id: session_id.to_string(),
                archive_id: archive_id.clone(),
            },
            actor,
            at,
        )?;
        if let Some(root) = &self.archive_root {
            let written = self
                .export_archive(session_id)
                .and_then(|b| {
                    b.write_to(&root.join(&archive_id))
                        .map_err(|e| StocktakeError::Storage(e.into()))
                });
            if let Err(e) = written {
                warn!(archive = %archive_id, error = %e, "archive bundle not written");
            }
        }
        Ok(archive_id)
    }

    pub fn export_archive(&self, session_id: &str) -> Result<ArchiveBundle, StocktakeError> {
        let session = self.state.session(session_id)?;
        let archive_id = session
            .archive_id
            .as_ref()
            .ok_or_else(|| StocktakeError::NotArchived(session_id.to_string()))?;
        let record = &self.state.archives[archive_id];
        let entries = self.store.range(record.first_seq, record.last_seq);
        Ok(ArchiveBundle::build(record, session, entries))
    }

    pub fn archive(&self, archive_id: &str) -> Result<ArchiveBundle, StocktakeError> {
        let record = self
            .state
            .archives
            .get(archive_id)
            .ok_or_else(|| StocktakeError::UnknownArchive(archive_id.to_string()))?;
        self.export_archive(&record.session_id)
    }
}
