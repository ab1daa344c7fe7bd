//! Durable session storage: an append-only journal of mutations plus a
//! periodic snapshot, one directory per session.
//!
//! ```text
//! <dir>/<session-id>/journal.jsonl   {"seq": n, "mutation": {...}} per line
//! <dir>/<session-id>/snapshot.json   {"seq": n, "document": {...}, "request_tokens": {...}}
//! ```
//!
//! Every record is flushed to disk before the mutation is applied. After a
//! snapshot is installed the journal is emptied. Recovery loads the snapshot
//! and replays journal records with a higher sequence number; a torn final
//! line (a crash mid-write) is discarded.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ideaspace_core::model::{ModelError, Mutation, Session, SessionDocument};
use serde::{Deserialize, Serialize};

const JOURNAL: &str = "journal.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("storage error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt journal {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("cannot rebuild session from {path}: {source}")]
    Replay {
        path: PathBuf,
        #[source]
        source: ModelError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    seq: u64,
    mutation: Mutation,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    document: SessionDocument,
    request_tokens: BTreeMap<String, String>,
}

/// Write side of one session's storage.
#[derive(Debug)]
pub struct Journal {
    dir: PathBuf,
    file: File,
    seq: u64,
    since_snapshot: u64,
    snapshot_every: u64,
}

impl Journal {
    /// Creates storage for a new session. Fails if it already exists.
    pub fn create(root: &Path, session_id: &str, snapshot_every: u64) -> Result<Journal, PersistError> {
        let dir = root.join(session_id);
        fs::create_dir_all(root).map_err(io_err(root))?;
        fs::create_dir(&dir).map_err(io_err(&dir))?;
        let path = dir.join(JOURNAL);
        let file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        sync_dir(root)?;
        Ok(Journal {
            dir,
            file,
            seq: 0,
            since_snapshot: 0,
            snapshot_every,
        })
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Durably appends one mutation.
    pub fn append(&mut self, mutation: &Mutation) -> Result<(), PersistError> {
        let record = Record {
            seq: self.seq + 1,
            mutation: mutation.clone(),
        };
        let mut line = serde_json::to_string(&record).expect("mutations serialize");
        line.push('\n');
        let path = self.dir.join(JOURNAL);
        self.file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.file.sync_data().map_err(io_err(&path))?;
        self.seq += 1;
        self.since_snapshot += 1;
        Ok(())
    }

    pub fn snapshot_due(&self) -> bool {
        self.since_snapshot >= self.snapshot_every
    }

    /// Installs a snapshot of `session` (which must reflect every appended
    /// record) and empties the journal.
    pub fn snapshot(&mut self, session: &Session) -> Result<(), PersistError> {
        let snap = Snapshot {
            seq: self.seq,
            document: session.export(),
            request_tokens: session.request_tokens().clone(),
        };
        let tmp = self.dir.join("snapshot.json.tmp");
        let dest = self.dir.join(SNAPSHOT);
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(serde_json::to_string(&snap).expect("snapshots serialize").as_bytes())
                .map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &dest).map_err(io_err(&dest))?;
        sync_dir(&self.dir)?;
        // Records up to `seq` are now covered; a crash before this point
        // leaves them in place and recovery skips them by sequence number.
        let path = self.dir.join(JOURNAL);
        self.file.set_len(0).map_err(io_err(&path))?;
        self.file.sync_all().map_err(io_err(&path))?;
        self.since_snapshot = 0;
        Ok(())
    }
}

fn sync_dir(dir: &Path) -> Result<(), PersistError> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io_err(dir))
}

/// Stores a session that did not come from a journal, such as an import.
pub fn store_new(root: &Path, session: &Session, snapshot_every: u64) -> Result<Journal, PersistError> {
    let mut journal = Journal::create(root, session.id(), snapshot_every)?;
    journal.snapshot(session)?;
    Ok(journal)
}

/// Rebuilds one session from its directory.
pub fn recover(dir: &Path, snapshot_every: u64) -> Result<(Session, Journal), PersistError> {
    let snap_path = dir.join(SNAPSHOT);
    let mut session: Option<Session> = None;
    let mut seq = 0;
    if snap_path.exists() {
        let text = fs::read_to_string(&snap_path).map_err(io_err(&snap_path))?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| PersistError::Corrupt {
            path: snap_path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        seq = snap.seq;
        session = Some(
            Session::from_parts(snap.document, snap.request_tokens).map_err(|source| PersistError::Replay {
                path: snap_path.clone(),
                source,
            })?,
        );
    }

    let path = dir.join(JOURNAL);
    let file = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(&path)
        .map_err(io_err(&path))?;
    let mut reader = BufReader::new(&file);
    let mut valid_len: u64 = 0;
    let mut line_no = 0;
    let mut buf: Vec<u8> = Vec::new();
    let mut since_snapshot = 0;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(&path))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if buf.last() != Some(&b'\n') {
            tracing::warn!(path = %path.display(), line = line_no, "discarding torn journal tail");
            break;
        }
        let record: Record = serde_json::from_slice(&buf).map_err(|e| PersistError::Corrupt {
            path: path.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        valid_len += n as u64;
        if record.seq <= seq {
            continue;
        }
        if record.seq != seq + 1 {
            return Err(PersistError::Corrupt {
                path: path.clone(),
                line: line_no,
                message: format!("expected record {}, found {}", seq + 1, record.seq),
            });
        }
        let replay = |e| PersistError::Replay {
            path: path.clone(),
            source: e,
        };
        match session.as_mut() {
            None => session = Some(Session::from_created(&record.mutation).map_err(replay)?),
            Some(s) => s.apply(&record.mutation).map_err(replay)?,
        }
        seq = record.seq;
        since_snapshot += 1;
    }
    drop(reader);
    if file.metadata().map_err(io_err(&path))?.len() != valid_len {
        file.set_len(valid_len).map_err(io_err(&path))?;
        file.sync_all().map_err(io_err(&path))?;
    }
    let session = session.ok_or_else(|| PersistError::Corrupt {
        path: path.clone(),
        line: 0,
        message: "no snapshot and no records".into(),
    })?;
    Ok((
        session,
        Journal {
            dir: dir.to_path_buf(),
            file,
            seq,
            since_snapshot,
            snapshot_every,
        },
    ))
}

/// Every session under `root`, in directory-name order.
pub fn recover_all(root: &Path, snapshot_every: u64) -> Result<Vec<(Session, Journal)>, PersistError> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(io_err(root))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut out = Vec::with_capacity(dirs.len());
    for dir in dirs {
        // A directory with an empty journal and no snapshot is a session whose
        // creation never got acknowledged.
        let journal = dir.join(JOURNAL);
        let empty = fs::metadata(&journal).map(|m| m.len() == 0).unwrap_or(true);
        if empty && !dir.join(SNAPSHOT).exists() {
            tracing::warn!(dir = %dir.display(), "skipping session directory without records");
            continue;
        }
        out.push(recover(&dir, snapshot_every)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ideaspace_core::model::{DimensionDraft, InteractionEvent, EventKind};

    fn draft(a: &str, b: &str) -> DimensionDraft {
        DimensionDraft {
            pole_a_name: a.into(),
            pole_a_description: "a".into(),
            pole_b_name: b.into(),
            pole_b_description: "b".into(),
            explanation: "e".into(),
        }
    }

    fn apply(s: &mut Session, j: &mut Journal, m: Mutation) {
        j.append(&m).unwrap();
        s.apply(&m).unwrap();
        if j.snapshot_due() {
            j.snapshot(s).unwrap();
        }
    }

    fn build(root: &Path, every: u64, events: usize) -> Session {
        let (mut s, created) = Session::create("s1", "intent").unwrap();
        let mut j = Journal::create(root, "s1", every).unwrap();
        j.append(&created).unwrap();
        let m = s.prepare_add_candidates(vec![draft("A", "B")]).unwrap();
        apply(&mut s, &mut j, m);
        for i in 0..events {
            let ev = InteractionEvent::client(EventKind::Rotation, serde_json::json!({ "i": i }), chrono::Utc::now());
            let m = s.prepare_events(vec![ev]).unwrap();
            apply(&mut s, &mut j, m);
        }
        s
    }

    #[test]
    fn replay_without_snapshot() {
        let root = tempfile::tempdir().unwrap();
        let s = build(root.path(), 1000, 3);
        let (r, j) = recover(&root.path().join("s1"), 1000).unwrap();
        assert_eq!(r.export_json(), s.export_json());
        assert_eq!(j.seq(), 5);
    }

    #[test]
    fn replay_across_snapshots() {
        let root = tempfile::tempdir().unwrap();
        let s = build(root.path(), 3, 8);
        let (r, j) = recover(&root.path().join("s1"), 3).unwrap();
        assert_eq!(r.export_json(), s.export_json());
        assert_eq!(j.seq(), 10);
    }

    #[test]
    fn torn_tail_is_dropped_and_truncated() {
        let root = tempfile::tempdir().unwrap();
        let s = build(root.path(), 1000, 2);
        let path = root.path().join("s1").join(JOURNAL);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"seq\":5,\"mutation\":{\"type\":\"eve").unwrap();
        drop(f);
        let (r, mut j) = recover(&root.path().join("s1"), 1000).unwrap();
        assert_eq!(r.export_json(), s.export_json());
        // Appending after recovery starts on a clean line.
        let ev = InteractionEvent::client(EventKind::Rotation, serde_json::json!({}), chrono::Utc::now());
        let m = r.prepare_events(vec![ev]).unwrap();
        j.append(&m).unwrap();
        let (again, _) = recover(&root.path().join("s1"), 1000).unwrap();
        assert_eq!(again.events().len(), r.events().len() + 1);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let root = tempfile::tempdir().unwrap();
        build(root.path(), 1000, 2);
        let path = root.path().join("s1").join(JOURNAL);
        let text = fs::read_to_string(&path).unwrap();
        let broken = text.replacen("\"seq\":2", "\"seq\":x", 1);
        fs::write(&path, broken).unwrap();
        assert!(matches!(
            recover(&root.path().join("s1"), 1000),
            Err(PersistError::Corrupt { line: 2, .. })
        ));
    }

    #[test]
    fn recover_all_skips_unacknowledged_dirs() {
        let root = tempfile::tempdir().unwrap();
        build(root.path(), 1000, 0);
        Journal::create(root.path(), "s2", 10).unwrap();
        let all = recover_all(root.path(), 1000).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].0.id(), "s1");
    }
}
