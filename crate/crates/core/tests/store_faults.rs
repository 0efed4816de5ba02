use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use stocktake_core::events::ClearScope;
use stocktake_core::store::{FileSink, StorageError, LOG_FILE_NAME};
use stocktake_core::{Actor, Credentials, Engine, Event, StocktakeError, Store, StoreConfig};

const CSV: &[u8] = b"bin_code,batch_code,hu_code,category,shelved_at_unix\nB1,X,H1,A,0\nB1,X,H2,A,0\n";

fn config(root: &Path) -> StoreConfig {
    StoreConfig {
        primary_log_dir: root.join("primary"),
        mirror_log_dir: root.join("mirror"),
        fsync: false,
    }
}

fn file_engine(root: &Path) -> Engine {
    let (store, _) = Store::open_dirs(&config(root)).unwrap();
    Engine::new(store, Credentials::default()).unwrap()
}

#[test]
fn full_mirror_rejects_append_and_leaves_primary_untouched() {
    if !Path::new("/dev/full").exists() {
        eprintln!("skipping: /dev/full not available");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let primary = FileSink::open_dir(&dir.path().join("primary"), false).unwrap();
    let mirror = FileSink::open_path(Path::new("/dev/full"), false).unwrap();
    let (store, _) = Store::open(Box::new(primary), Box::new(mirror)).unwrap();
    let mut e = Engine::new(store, Credentials::default()).unwrap();

    let err = e.import_reference(&Actor::admin("boss"), CSV, 0).unwrap_err();
    assert!(matches!(err, StocktakeError::Storage(StorageError::StorageFailure(_))), "{err:?}");
    assert!(e.state().reference().is_none());
    assert_eq!(e.store().last_seq(), 0);
    assert_eq!(fs::metadata(dir.path().join("primary").join(LOG_FILE_NAME)).unwrap().len(), 0);

    // The failure is reported, not latched: a later attempt fails the same way.
    let err = e.import_reference(&Actor::admin("boss"), CSV, 1).unwrap_err();
    assert!(matches!(err, StocktakeError::Storage(StorageError::StorageFailure(_))));
}

#[test]
fn restart_rebuilds_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let boss = Actor::admin("boss");
    let alice = Actor::operator("alice");
    let before = {
        let mut e = file_engine(dir.path());
        e.import_reference(&boss, CSV, 0).unwrap();
        let sid = e.create_session(&boss, 1).unwrap().session_id;
        e.start_bin_task(&alice, &sid, "B1", 2).unwrap();
        e.state().clone()
    };
    let (store, report) = Store::open_dirs(&config(dir.path())).unwrap();
    assert!(report.is_clean());
    let e = Engine::new(store, Credentials::default()).unwrap();
    assert_eq!(e.state(), &before);
}

#[test]
fn torn_write_is_truncated_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut e = file_engine(dir.path());
        e.import_reference(&Actor::admin("boss"), CSV, 0).unwrap();
    }
    let log = dir.path().join("primary").join(LOG_FILE_NAME);
    let good_len = fs::metadata(&log).unwrap().len();
    OpenOptions::new()
        .append(true)
        .open(&log)
        .unwrap()
        .write_all(&[200, 0, 0, 0, b'{', b'"'])
        .unwrap();

    let (store, report) = Store::open_dirs(&config(dir.path())).unwrap();
    assert_eq!(report.torn_primary, Some(2));
    assert_eq!(report.entries, 1);
    assert_eq!(store.last_seq(), 1);
    assert_eq!(fs::metadata(&log).unwrap().len(), good_len);
}

#[test]
fn lost_mirror_is_rebuilt_from_primary() {
    let dir = tempfile::tempdir().unwrap();
    {
        let mut e = file_engine(dir.path());
        e.import_reference(&Actor::admin("boss"), CSV, 0).unwrap();
        e.create_session(&Actor::admin("boss"), 1).unwrap();
    }
    let mirror_log = dir.path().join("mirror").join(LOG_FILE_NAME);
    fs::remove_file(&mirror_log).unwrap();

    let (store, report) = Store::open_dirs(&config(dir.path())).unwrap();
    assert_eq!(report.repaired_records, 2);
    assert_eq!(store.last_seq(), 2);
    assert_eq!(
        fs::read(&mirror_log).unwrap(),
        fs::read(dir.path().join("primary").join(LOG_FILE_NAME)).unwrap()
    );
}

#[test]
fn corrupt_middle_record_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    {
        let (mut store, _) = Store::open_dirs(&config(dir.path())).unwrap();
        for i in 0..3 {
            store
                .append(Event::Clear { scope: ClearScope::History }, "boss", i)
                .unwrap();
        }
    }
    for copy in ["primary", "mirror"] {
        let log = dir.path().join(copy).join(LOG_FILE_NAME);
        let mut bytes = fs::read(&log).unwrap();
        bytes[10] ^= 0x20;
        fs::write(&log, bytes).unwrap();
    }
    match Store::open_dirs(&config(dir.path())) {
        Err(StorageError::CorruptEntry { seq: 1, .. }) => {}
        other => panic!("expected corruption at seq 1, got {:?}", other.map(|(_, r)| r)),
    }
}
