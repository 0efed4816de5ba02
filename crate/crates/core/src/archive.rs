//! Archive bundles for finished sessions.
//!
//! A bundle is a directory with three files:
//!
//! - `entries.jsonl`: the log entries from the session's reference import
//!   through its archive entry, one JSON object per line, byte-identical to
//!   the stored records;
//! - `reconciliation.csv`: one row per bin with the frozen sign-off result;
//! - `manifest.json`: counts plus a SHA-256 over the other two files.
//!
//! Serialization is stable, so exporting the same archive twice yields
//! identical bytes.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::inventory::UNKNOWN_ORIGIN;
use crate::session::{replay, ArchiveRecord, ReplayError, StocktakeSession};
use crate::store::{LogEntry, StoredEntry};

pub const ENTRIES_FILE: &str = "entries.jsonl";
pub const RECONCILIATION_FILE: &str = "reconciliation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

const RECONCILIATION_HEADER: [&str; 10] = [
    "bin_code",
    "operator_id",
    "signed_off_at",
    "expected_qty",
    "counted_qty",
    "shortage_qty",
    "batches",
    "missing_hu_codes",
    "surplus",
    "returned_hu_codes",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub archive_id: String,
    pub session_id: String,
    pub first_seq: u64,
    pub last_seq: u64,
    pub entry_count: usize,
    pub bin_count: usize,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveBundle {
    pub manifest: Manifest,
    pub entries_jsonl: String,
    pub reconciliation_csv: String,
}

impl ArchiveBundle {
    pub fn build(record: &ArchiveRecord, session: &StocktakeSession, entries: &[StoredEntry]) -> Self {
        let mut entries_jsonl = String::new();
        for e in entries {
            entries_jsonl.push_str(&e.json);
            entries_jsonl.push('\n');
        }
        let reconciliation_csv = reconciliation_table(session);
        let manifest = Manifest {
            archive_id: record.archive_id.clone(),
            session_id: record.session_id.clone(),
            first_seq: record.first_seq,
            last_seq: record.last_seq,
            entry_count: entries.len(),
            bin_count: session.bin_tasks.len(),
            content_hash: content_hash(&entries_jsonl, &reconciliation_csv),
        };
        ArchiveBundle {
            manifest,
            entries_jsonl,
            reconciliation_csv,
        }
    }

    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(ENTRIES_FILE), &self.entries_jsonl)?;
        fs::write(dir.join(RECONCILIATION_FILE), &self.reconciliation_csv)?;
        let mut manifest = serde_json::to_string_pretty(&self.manifest).map_err(io::Error::other)?;
        manifest.push('\n');
        fs::write(dir.join(MANIFEST_FILE), manifest)
    }

    pub fn read_from(dir: &Path) -> io::Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
            .map_err(io::Error::other)?;
        Ok(ArchiveBundle {
            manifest,
            entries_jsonl: fs::read_to_string(dir.join(ENTRIES_FILE))?,
            reconciliation_csv: fs::read_to_string(dir.join(RECONCILIATION_FILE))?,
        })
    }

    pub fn verify_hash(&self) -> bool {
        content_hash(&self.entries_jsonl, &self.reconciliation_csv) == self.manifest.content_hash
    }

    pub fn entries(&self) -> Result<Vec<StoredEntry>, ReplayError> {
        self.entries_jsonl
            .lines()
            .enumerate()
            .map(|(i, line)| {
                serde_json::from_str::<LogEntry>(line)
                    .map(|entry| StoredEntry {
                        entry,
                        json: line.to_string(),
                    })
                    .map_err(|e| ReplayError {
                        seq: self.manifest.first_seq + i as u64,
                        reason: e.to_string(),
                    })
            })
            .collect()
    }

    /// Replays the bundled entries and returns the archived session.
    pub fn replay_session(&self) -> Result<StocktakeSession, ReplayError> {
        let state = replay(&self.entries()?)?;
        state
            .session(&self.manifest.session_id)
            .cloned()
            .map_err(|e| ReplayError {
                seq: self.manifest.last_seq,
                reason: e.to_string(),
            })
    }
}

fn content_hash(entries: &str, reconciliation: &str) -> String {
    let mut h = Sha256::new();
    h.update(entries.as_bytes());
    h.update(reconciliation.as_bytes());
    hex::encode(h.finalize())
}

/// One CSV row per bin, using each task's frozen reconciliation when
/// present.
pub fn reconciliation_table(session: &StocktakeSession) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RECONCILIATION_HEADER).expect("write to vec");
    for task in session.bin_tasks.values() {
        let r = task.reconciliation(&session.reference);
        let (operator, signed_at) = match &task.signoff {
            Some(s) => (s.operator_id.clone(), s.at.to_string()),
            None => (String::new(), String::new()),
        };
        let batches = r
            .per_batch
            .iter()
            .map(|(b, t)| format!("{b}:{}:{}", t.expected_qty, t.counted_qty))
            .collect::<Vec<_>>()
            .join(";");
        let missing = r
            .per_batch
            .values()
            .flat_map(|t| t.missing_hu_codes.iter().cloned())
            .collect::<Vec<_>>()
            .join(";");
        let surplus = r
            .surplus
            .iter()
            .map(|s| format!("{}@{}", s.hu_code, s.designated_bin.as_deref().unwrap_or(UNKNOWN_ORIGIN)))
            .collect::<Vec<_>>()
            .join(";");
        let returned = r
            .surplus
            .iter()
            .filter(|s| s.returned)
            .map(|s| s.hu_code.clone())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            task.bin_code.clone(),
            operator,
            signed_at,
            r.expected_qty().to_string(),
            r.counted_qty().to_string(),
            r.shortage_qty().to_string(),
            batches,
            missing,
            surplus,
            returned,
        ])
        .expect("write to vec");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::{Actor, Credentials};
    use crate::session::{Engine, ScanRequest, StocktakeError};
    use crate::store::Store;

    fn archived_engine() -> (Engine, String) {
        let boss = Actor::admin("boss");
        let alice = Actor::operator("alice");
        let mut e = Engine::new(Store::in_memory(), Credentials::default()).unwrap();
        e.import_reference(
            &boss,
            b"bin_code,batch_code,hu_code,category,shelved_at_unix\n\
              B1,X,H1,A,100\nB1,X,H2,A,100\nB2,Y,K9,B,200\nB3,Z,Z1,C,300\n",
            0,
        )
        .unwrap();
        let sid = e.create_session(&boss, 1).unwrap().session_id;
        assert!(matches!(e.export_archive(&sid), Err(StocktakeError::NotArchived(_))));
        for (i, (bin, hus)) in [("B1", vec!["H1", "K9"]), ("B2", vec![]), ("B3", vec!["Z1"])]
            .into_iter()
            .enumerate()
        {
            e.start_bin_task(&alice, &sid, bin, 10).unwrap();
            for (j, hu) in hus.iter().enumerate() {
                e.submit_scan(
                    &alice,
                    ScanRequest {
                        session_id: sid.clone(),
                        bin_code: bin.into(),
                        event_id: format!("e{i}-{j}"),
                        payload: format!("{bin}|X|{hu}"),
                        at: 11,
                    },
                )
                .unwrap();
            }
            if bin == "B1" {
                e.acknowledge_surplus(&alice, &sid, bin, "K9", true, 12).unwrap();
            }
            e.sign_off_bin(&alice, &sid, bin, &["Y".into()], 13).unwrap();
        }
        e.archive_session(&boss, &sid, 20).unwrap();
        (e, sid)
    }

    #[test]
    fn bundle_has_one_row_per_bin_and_is_stable() {
        let (e, sid) = archived_engine();
        let a = e.export_archive(&sid).unwrap();
        let b = e.export_archive(&sid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reconciliation_csv.lines().count(), 1 + 3);
        assert!(a.reconciliation_csv.contains("B1,alice,13,2,1,1,X:2:1,H2,K9@B2,K9"));
        assert_eq!(a.manifest.entry_count, a.entries_jsonl.lines().count());
        assert!(a.verify_hash());

        let dir = tempfile::tempdir().unwrap();
        a.write_to(&dir.path().join("one")).unwrap();
        b.write_to(&dir.path().join("two")).unwrap();
        for f in [ENTRIES_FILE, RECONCILIATION_FILE, MANIFEST_FILE] {
            assert_eq!(
                fs::read(dir.path().join("one").join(f)).unwrap(),
                fs::read(dir.path().join("two").join(f)).unwrap()
            );
        }
        assert_eq!(ArchiveBundle::read_from(&dir.path().join("one")).unwrap(), a);
    }

    #[test]
    fn bundle_replay_reproduces_frozen_reconciliations() {
        let (e, sid) = archived_engine();
        let bundle = e.export_archive(&sid).unwrap();
        let session = bundle.replay_session().unwrap();
        assert_eq!(&session, e.state().session(&sid).unwrap());
        assert_eq!(reconciliation_table(&session), bundle.reconciliation_csv);
    }
}
