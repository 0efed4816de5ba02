//! Append-only event log, written to a primary and a mirror copy.
//!
//! On-disk record framing, repeated until end of file:
//!
//! ```text
//! [u32 LE length][length bytes of JSON LogEntry][u32 LE CRC-32 of the JSON]
//! ```
//!
//! Each entry carries the SHA-256 of its predecessor's JSON in
//! `prev_hash`, so an in-place edit breaks the chain even when the
//! checksum is recomputed. An append is acknowledged only after both copies
//! accept the full record; if either write fails the record is rolled back
//! from both.
//!
//! Because appends are serialized and acknowledged one at a time, at most
//! one record can exist in one copy and not the other after a crash. Recovery
//! drops such a record; a longer divergence means a copy was lost and it is
//! rebuilt from the other.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;

use crate::events::Event;

pub const LOG_FILE_NAME: &str = "events.log";
pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

const FRAME_OVERHEAD: usize = 8;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("corrupt entry at seq {seq}: {reason}")]
    CorruptEntry { seq: u64, reason: String },
    #[error("primary and mirror logs diverge at seq {0}")]
    MirrorDivergence(u64),
    #[error("store is poisoned after a failed rollback; restart to recover")]
    Poisoned,
}

impl From<io::Error> for StorageError {
    fn from(e: io::Error) -> Self {
        StorageError::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: i64,
    pub actor: String,
    pub prev_hash: String,
    #[serde(flatten)]
    pub event: Event,
}

/// A byte sink holding one copy of the log.
#[allow(clippy::len_without_is_empty)]
pub trait LogSink: Send {
    fn len(&mut self) -> io::Result<u64>;
    fn append(&mut self, bytes: &[u8]) -> io::Result<()>;
    fn truncate(&mut self, len: u64) -> io::Result<()>;
    fn read_all(&mut self) -> io::Result<Vec<u8>>;
}

pub struct FileSink {
    path: PathBuf,
    file: File,
    fsync: bool,
}

impl FileSink {
    /// Opens `<dir>/events.log`, creating the directory if needed.
    pub fn open_dir(dir: &Path, fsync: bool) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Self::open_path(&dir.join(LOG_FILE_NAME), fsync)
    }

    pub fn open_path(path: &Path, fsync: bool) -> io::Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        Ok(FileSink {
            path: path.to_path_buf(),
            file,
            fsync,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LogSink for FileSink {
    fn len(&mut self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.file.write_all(bytes)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.file.set_len(len)?;
        if self.fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        // Reads only up to the reported length so device files stay finite.
        let len = self.len()?;
        let mut buf = Vec::with_capacity(len as usize);
        File::open(&self.path)?.take(len).read_to_end(&mut buf)?;
        Ok(buf)
    }
}

/// In-memory sink with a switchable write failure, for tests and
/// ephemeral engines.
#[derive(Clone, Default)]
pub struct MemorySink {
    data: Arc<Mutex<Vec<u8>>>,
    fail_writes: Arc<AtomicBool>,
}

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_bytes(bytes: Vec<u8>) -> Self {
        MemorySink {
            data: Arc::new(Mutex::new(bytes)),
            fail_writes: Arc::default(),
        }
    }

    pub fn set_fail_writes(&self, fail: bool) {
        self.fail_writes.store(fail, Ordering::SeqCst);
    }

    pub fn bytes(&self) -> Vec<u8> {
        self.data.lock().unwrap().clone()
    }
}

impl LogSink for MemorySink {
    fn len(&mut self) -> io::Result<u64> {
        Ok(self.data.lock().unwrap().len() as u64)
    }

    fn append(&mut self, bytes: &[u8]) -> io::Result<()> {
        if self.fail_writes.load(Ordering::SeqCst) {
            return Err(io::Error::other("injected write failure"));
        }
        self.data.lock().unwrap().extend_from_slice(bytes);
        Ok(())
    }

    fn truncate(&mut self, len: u64) -> io::Result<()> {
        self.data.lock().unwrap().truncate(len as usize);
        Ok(())
    }

    fn read_all(&mut self) -> io::Result<Vec<u8>> {
        Ok(self.bytes())
    }
}

pub fn hash_json(json: &str) -> String {
    hex::encode(Sha256::digest(json.as_bytes()))
}

pub fn frame_record(json: &str) -> Vec<u8> {
    let body = json.as_bytes();
    let mut out = Vec::with_capacity(body.len() + FRAME_OVERHEAD);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out.extend_from_slice(&crc32fast::hash(body).to_le_bytes());
    out
}

/// A decoded record together with its exact JSON text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredEntry {
    pub entry: LogEntry,
    pub json: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    /// Sequence number the bad record would have had.
    pub seq: u64,
    pub offset: u64,
    pub reason: String,
    /// A torn tail is an incomplete or unverifiable final record.
    pub torn_tail: bool,
}

/// Result of decoding a raw log.
#[derive(Debug, Clone, Default)]
pub struct LogScan {
    pub records: Vec<StoredEntry>,
    /// Byte offset just past each record.
    pub ends: Vec<u64>,
    pub corruption: Option<Corruption>,
}

impl LogScan {
    pub fn valid_len(&self) -> u64 {
        self.ends.last().copied().unwrap_or(0)
    }
}

/// Decodes framed records, stopping at the first record that fails its
/// length, checksum, JSON, sequence or hash-chain check.
pub fn scan_log(bytes: &[u8]) -> LogScan {
    let mut scan = LogScan::default();
    let mut offset = 0usize;
    let mut prev_hash = GENESIS_HASH.to_string();
    let mut expected_seq = 1u64;

    while offset < bytes.len() {
        let fail = |reason: String, torn_tail: bool| Corruption {
            seq: expected_seq,
            offset: offset as u64,
            reason,
            torn_tail,
        };
        let rest = &bytes[offset..];
        if rest.len() < 4 {
            scan.corruption = Some(fail("truncated length prefix".into(), true));
            break;
        }
        let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        if rest.len() < len + FRAME_OVERHEAD {
            scan.corruption = Some(fail("truncated record".into(), true));
            break;
        }
        let end = offset + len + FRAME_OVERHEAD;
        let is_last = end == bytes.len();
        let body = &rest[4..4 + len];
        let crc = u32::from_le_bytes(rest[4 + len..len + FRAME_OVERHEAD].try_into().unwrap());
        if crc32fast::hash(body) != crc {
            scan.corruption = Some(fail("checksum mismatch".into(), is_last));
            break;
        }
        let json = match std::str::from_utf8(body) {
            Ok(s) => s,
            Err(e) => {
                scan.corruption = Some(fail(format!("invalid utf-8: {e}"), is_last));
                break;
            }
        };
        let entry: LogEntry = match serde_json::from_str(json) {
            Ok(e) => e,
            Err(e) => {
                scan.corruption = Some(fail(format!("invalid record: {e}"), is_last));
                break;
            }
        };
        if entry.seq != expected_seq {
            scan.corruption = Some(fail(format!("found seq {}", entry.seq), false));
            break;
        }
        if entry.prev_hash != prev_hash {
            scan.corruption = Some(fail("hash chain broken".into(), false));
            break;
        }
        prev_hash = hash_json(json);
        expected_seq += 1;
        offset = end;
        scan.ends.push(end as u64);
        scan.records.push(StoredEntry {
            entry,
            json: json.to_string(),
        });
    }
    scan
}

/// Checks seq density and the hash chain over an entry slice starting at
/// `prev_hash`.
pub fn verify_chain(entries: &[StoredEntry], mut prev_hash: String) -> Result<(), StorageError> {
    let first = entries.first().map_or(1, |e| e.entry.seq);
    for (expected, stored) in (first..).zip(entries) {
        if stored.entry.seq != expected {
            return Err(StorageError::CorruptEntry {
                seq: expected,
                reason: format!("found seq {}", stored.entry.seq),
            });
        }
        if stored.entry.prev_hash != prev_hash {
            return Err(StorageError::CorruptEntry {
                seq: expected,
                reason: "hash chain broken".into(),
            });
        }
        if serde_json::from_str::<LogEntry>(&stored.json).ok().as_ref() != Some(&stored.entry) {
            return Err(StorageError::CorruptEntry {
                seq: expected,
                reason: "entry does not match its text".into(),
            });
        }
        prev_hash = hash_json(&stored.json);
    }
    Ok(())
}

/// What recovery found and fixed when opening a store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RecoveryReport {
    pub entries: usize,
    pub torn_primary: Option<u64>,
    pub torn_mirror: Option<u64>,
    /// Records present in one copy only and therefore never acknowledged.
    pub dropped_unacknowledged: usize,
    /// Records copied into a copy that had lost them.
    pub repaired_records: usize,
}

impl RecoveryReport {
    pub fn is_clean(&self) -> bool {
        self.torn_primary.is_none()
            && self.torn_mirror.is_none()
            && self.dropped_unacknowledged == 0
            && self.repaired_records == 0
    }
}

/// Reads the acknowledged entries of `<dir>/events.log` without repairing
/// anything; a torn tail is ignored. Safe while a server is appending.
pub fn read_log_dir(dir: &Path) -> Result<Vec<StoredEntry>, StorageError> {
    let bytes = fs::read(dir.join(LOG_FILE_NAME))?;
    let scan = scan_log(&bytes);
    if let Some(c) = scan.corruption.filter(|c| !c.torn_tail) {
        return Err(StorageError::CorruptEntry {
            seq: c.seq,
            reason: c.reason,
        });
    }
    verify_chain(&scan.records, GENESIS_HASH.to_string())?;
    Ok(scan.records)
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub primary_log_dir: PathBuf,
    pub mirror_log_dir: PathBuf,
    pub fsync: bool,
}

pub struct Store {
    primary: Box<dyn LogSink>,
    mirror: Box<dyn LogSink>,
    entries: Vec<StoredEntry>,
    len: u64,
    last_hash: String,
    poisoned: bool,
}

impl Store {
    pub fn open_dirs(config: &StoreConfig) -> Result<(Store, RecoveryReport), StorageError> {
        let primary = FileSink::open_dir(&config.primary_log_dir, config.fsync)?;
        let mirror = FileSink::open_dir(&config.mirror_log_dir, config.fsync)?;
        Store::open(Box::new(primary), Box::new(mirror))
    }

    /// A store backed by two fresh in-memory sinks.
    pub fn in_memory() -> Store {
        Store::open(Box::new(MemorySink::new()), Box::new(MemorySink::new()))
            .expect("empty memory sinks always open")
            .0
    }

    pub fn open(
        mut primary: Box<dyn LogSink>,
        mut mirror: Box<dyn LogSink>,
    ) -> Result<(Store, RecoveryReport), StorageError> {
        let p_scan = scan_log(&primary.read_all()?);
        let m_scan = scan_log(&mirror.read_all()?);
        let mut report = RecoveryReport::default();

        for (scan, slot) in [
            (&p_scan, &mut report.torn_primary),
            (&m_scan, &mut report.torn_mirror),
        ] {
            if let Some(c) = &scan.corruption {
                if !c.torn_tail {
                    return Err(StorageError::CorruptEntry {
                        seq: c.seq,
                        reason: c.reason.clone(),
                    });
                }
                warn!(seq = c.seq, reason = %c.reason, "truncating torn trailing record");
                *slot = Some(c.seq);
            }
        }

        let common = p_scan
            .records
            .iter()
            .zip(&m_scan.records)
            .take_while(|(p, m)| p.json == m.json)
            .count();
        let (p_n, m_n) = (p_scan.records.len(), m_scan.records.len());
        if common < p_n.min(m_n) {
            return Err(StorageError::MirrorDivergence(common as u64 + 1));
        }
        let common_len = if common == 0 { 0 } else { p_scan.ends[common - 1] };

        let (longer, longer_n) = if p_n >= m_n { (&p_scan, p_n) } else { (&m_scan, m_n) };
        let extra = longer_n - common;
        let keep = if extra <= 1 {
            report.dropped_unacknowledged = extra;
            common
        } else {
            report.repaired_records = extra;
            longer_n
        };

        if keep == common {
            truncate_to(primary.as_mut(), common_len)?;
            truncate_to(mirror.as_mut(), common_len)?;
        } else {
            let (long_sink, short_sink) = if p_n >= m_n {
                (&mut primary, &mut mirror)
            } else {
                (&mut mirror, &mut primary)
            };
            truncate_to(long_sink.as_mut(), longer.ends[keep - 1])?;
            truncate_to(short_sink.as_mut(), common_len)?;
            for stored in &longer.records[common..keep] {
                short_sink.append(&frame_record(&stored.json))?;
            }
        }

        let entries: Vec<StoredEntry> = longer.records[..keep].to_vec();
        let len = if keep == 0 { 0 } else { longer.ends[keep - 1] };
        let last_hash = entries
            .last()
            .map_or_else(|| GENESIS_HASH.to_string(), |e| hash_json(&e.json));
        report.entries = entries.len();

        Ok((
            Store {
                primary,
                mirror,
                entries,
                len,
                last_hash,
                poisoned: false,
            },
            report,
        ))
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.len() as u64 + 1
    }

    pub fn last_seq(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn entries(&self) -> &[StoredEntry] {
        &self.entries
    }

    /// Entries with `first <= seq <= last`.
    pub fn range(&self, first: u64, last: u64) -> &[StoredEntry] {
        let lo = first.max(1) as usize - 1;
        let hi = (last as usize).min(self.entries.len());
        if lo >= hi {
            return &[];
        }
        &self.entries[lo..hi]
    }

    /// Hash preceding entry `seq`.
    pub fn prev_hash_of(&self, seq: u64) -> String {
        if seq <= 1 {
            GENESIS_HASH.to_string()
        } else {
            hash_json(&self.entries[seq as usize - 2].json)
        }
    }

    /// Appends to both copies and returns the stored entry once both
    /// accepted it.
    pub fn append(&mut self, event: Event, actor: &str, at: i64) -> Result<&StoredEntry, StorageError> {
        if self.poisoned {
            return Err(StorageError::Poisoned);
        }
        let entry = LogEntry {
            seq: self.next_seq(),
            at,
            actor: actor.to_string(),
            prev_hash: self.last_hash.clone(),
            event,
        };
        let json = serde_json::to_string(&entry)
            .map_err(|e| StorageError::StorageFailure(format!("serialize: {e}")))?;
        let frame = frame_record(&json);

        if let Err(e) = self.primary.append(&frame) {
            self.rollback(false);
            return Err(e.into());
        }
        if let Err(e) = self.mirror.append(&frame) {
            self.rollback(true);
            return Err(e.into());
        }

        self.len += frame.len() as u64;
        self.last_hash = hash_json(&json);
        self.entries.push(StoredEntry { entry, json });
        Ok(self.entries.last().unwrap())
    }

    fn rollback(&mut self, mirror_too: bool) {
        let len = self.len;
        let mut ok = restore_len(self.primary.as_mut(), len);
        if mirror_too {
            ok &= restore_len(self.mirror.as_mut(), len);
        }
        if !ok {
            warn!("rollback after failed append did not complete; store poisoned");
            self.poisoned = true;
        }
    }
}

/// Truncates only when the length differs, so sinks that cannot be
/// truncated still open when they are already the right size.
fn truncate_to(sink: &mut dyn LogSink, len: u64) -> io::Result<()> {
    if sink.len()? == len {
        Ok(())
    } else {
        sink.truncate(len)
    }
}

fn restore_len(sink: &mut dyn LogSink, len: u64) -> bool {
    truncate_to(sink, len).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ClearScope;

    fn ev(i: u64) -> Event {
        Event::SessionCreate {
            session_id: format!("S{i}"),
        }
    }

    fn mem_store() -> (Store, MemorySink, MemorySink) {
        let p = MemorySink::new();
        let m = MemorySink::new();
        let (s, _) = Store::open(Box::new(p.clone()), Box::new(m.clone())).unwrap();
        (s, p, m)
    }

    #[test]
    fn seqs_are_dense_from_one() {
        let (mut s, p, m) = mem_store();
        assert_eq!(s.append(ev(0), "admin", 0).unwrap().entry.seq, 1);
        for i in 1..100 {
            s.append(ev(i), "admin", i as i64).unwrap();
        }
        let seqs: Vec<u64> = s.entries().iter().map(|e| e.entry.seq).collect();
        assert_eq!(seqs, (1..=100).collect::<Vec<_>>());
        assert_eq!(p.bytes(), m.bytes());
        verify_chain(s.entries(), GENESIS_HASH.into()).unwrap();
    }

    #[test]
    fn entry_json_shape() {
        let (mut s, _, _) = mem_store();
        let json = s
            .append(Event::Clear { scope: ClearScope::History }, "admin", 7)
            .unwrap()
            .json
            .clone();
        assert_eq!(
            json,
            format!(
                r#"{{"seq":1,"at":7,"actor":"admin","prev_hash":"{GENESIS_HASH}","kind":"CLEAR","body":{{"scope":"HISTORY"}}}}"#
            )
        );
    }

    #[test]
    fn mirror_failure_rejects_everywhere() {
        let (mut s, p, m) = mem_store();
        s.append(ev(1), "a", 1).unwrap();
        let before = p.bytes();
        m.set_fail_writes(true);
        assert!(matches!(
            s.append(ev(2), "a", 2),
            Err(StorageError::StorageFailure(_))
        ));
        assert_eq!(p.bytes(), before);
        assert_eq!(s.last_seq(), 1);
        m.set_fail_writes(false);
        assert_eq!(s.append(ev(3), "a", 3).unwrap().entry.seq, 2);
        assert_eq!(p.bytes(), m.bytes());
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let (mut s, p, m) = mem_store();
        for i in 0..5 {
            s.append(ev(i), "a", 0).unwrap();
        }
        let mut bytes = p.bytes();
        let full = bytes.len();
        bytes.extend_from_slice(&frame_record("{\"seq\":6")[..7]);
        let (s2, report) = Store::open(
            Box::new(MemorySink::with_bytes(bytes)),
            Box::new(MemorySink::with_bytes(m.bytes())),
        )
        .unwrap();
        assert_eq!(report.torn_primary, Some(6));
        assert_eq!(s2.last_seq(), 5);
        assert_eq!(s2.len, full as u64);
    }

    #[test]
    fn unmirrored_tail_is_dropped_and_lost_mirror_rebuilt() {
        let (mut s, p, m) = mem_store();
        for i in 0..4 {
            s.append(ev(i), "a", 0).unwrap();
        }
        // One extra record in the primary: crash between the two writes.
        let mut p_bytes = p.bytes();
        let extra = serde_json::to_string(&LogEntry {
            seq: 5,
            at: 0,
            actor: "a".into(),
            prev_hash: hash_json(&s.entries()[3].json),
            event: ev(5),
        })
        .unwrap();
        p_bytes.extend(frame_record(&extra));
        let (s2, report) = Store::open(
            Box::new(MemorySink::with_bytes(p_bytes.clone())),
            Box::new(MemorySink::with_bytes(m.bytes())),
        )
        .unwrap();
        assert_eq!(report.dropped_unacknowledged, 1);
        assert_eq!(s2.last_seq(), 4);

        // Mirror lost entirely: rebuilt from the primary.
        let mirror = MemorySink::new();
        let (s3, report) =
            Store::open(Box::new(MemorySink::with_bytes(p.bytes())), Box::new(mirror.clone())).unwrap();
        assert_eq!(report.repaired_records, 4);
        assert_eq!(s3.last_seq(), 4);
        assert_eq!(mirror.bytes(), p.bytes());
    }

    #[test]
    fn tamper_is_detected() {
        let (mut s, p, _) = mem_store();
        for i in 0..3 {
            s.append(ev(i), "admin", 0).unwrap();
        }
        let bytes = p.bytes();

        // Edit without fixing the checksum.
        let mut raw = bytes.clone();
        let pos = raw.windows(2).position(|w| w == b"S0").unwrap();
        raw[pos + 1] = b'9';
        let scan = scan_log(&raw);
        assert_eq!(scan.corruption.as_ref().unwrap().seq, 1);
        assert!(!scan.corruption.unwrap().torn_tail);

        // Edit and re-frame: the hash chain catches it at the next entry.
        let mut entries: Vec<String> = s.entries().iter().map(|e| e.json.clone()).collect();
        entries[0] = entries[0].replace("S0", "S9");
        let rebuilt: Vec<u8> = entries.iter().flat_map(|j| frame_record(j)).collect();
        let scan = scan_log(&rebuilt);
        let c = scan.corruption.unwrap();
        assert_eq!((c.seq, c.reason.as_str()), (2, "hash chain broken"));
        assert!(matches!(
            Store::open(
                Box::new(MemorySink::with_bytes(rebuilt)),
                Box::new(MemorySink::with_bytes(bytes))
            ),
            Err(StorageError::CorruptEntry { seq: 2, .. })
        ));
    }

    #[test]
    fn range_is_inclusive() {
        let (mut s, _, _) = mem_store();
        for i in 0..10 {
            s.append(ev(i), "a", 0).unwrap();
        }
        let r = s.range(3, 5);
        assert_eq!(r.iter().map(|e| e.entry.seq).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(s.range(11, 20).is_empty());
        assert_eq!(s.prev_hash_of(3), hash_json(&s.entries()[1].json));
    }
}
