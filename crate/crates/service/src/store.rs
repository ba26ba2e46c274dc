//! Durable per-session storage: an append-only JSON-lines event log plus a
//! periodic snapshot of the folded record.
//!
//! Layout under the data directory: `sessions/{id}/events.jsonl` and
//! `sessions/{id}/snapshot.json`. An append is synced before it returns, so
//! an acknowledged event survives a crash. A torn final line (a write that
//! never finished, hence was never acknowledged) is cut off on open.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use recourse_core::study::StudyContext;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{Event, SessionError, SessionRecord};

pub const SNAPSHOT_EVERY: usize = 16;
const EVENTS: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: event {line} does not apply: {source}")]
    Replay { path: PathBuf, line: usize, source: SessionError },
    #[error("{path}: line {line} is not a valid event: {source}")]
    Corrupt { path: PathBuf, line: usize, source: serde_json::Error },
}

#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    /// Events folded into `record`.
    events: usize,
    record: SessionRecord,
}

pub fn sessions_dir(root: &Path) -> PathBuf {
    root.join("sessions")
}

#[derive(Debug)]
pub struct SessionLog {
    dir: PathBuf,
    file: File,
    len: u64,
    events: usize,
}

impl SessionLog {
    /// Starts a log for a new session with its creation event.
    pub fn create(root: &Path, id: &str, created: &Event) -> Result<Self, StoreError> {
        let dir = sessions_dir(root).join(id);
        fs::create_dir_all(&dir)?;
        let file = OpenOptions::new().create_new(true).append(true).open(dir.join(EVENTS))?;
        let mut log = SessionLog { dir, file, len: 0, events: 0 };
        log.append(created)?;
        Ok(log)
    }

    pub fn events(&self) -> usize {
        self.events
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        let written = self.file.write_all(&line).and_then(|_| self.file.sync_data());
        if let Err(e) = written {
            // Drop a partial line so later appends stay parseable.
            let _ = self.file.set_len(self.len);
            return Err(e.into());
        }
        self.len += line.len() as u64;
        self.events += 1;
        Ok(())
    }

    /// Writes a snapshot every [`SNAPSHOT_EVERY`] events.
    pub fn maybe_snapshot(&self, record: &SessionRecord) -> Result<(), StoreError> {
        if self.events % SNAPSHOT_EVERY == 0 {
            self.snapshot(record)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, record: &SessionRecord) -> Result<(), StoreError> {
        let tmp = self.dir.join("snapshot.json.tmp");
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, &Snapshot { events: self.events, record: record.clone() })?;
        f.sync_all()?;
        fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        Ok(())
    }

    /// Rebuilds a session from its directory: the snapshot, when present and
    /// consistent with the log, then the events after it.
    pub fn open(dir: &Path, ctx: &StudyContext) -> Result<(SessionRecord, SessionLog), StoreError> {
        let path = dir.join(EVENTS);
        let bytes = fs::read(&path)?;
        let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        if complete < bytes.len() {
            tracing::warn!(path = %path.display(), "dropping torn final event");
            OpenOptions::new().write(true).open(&path)?.set_len(complete as u64)?;
        }
        let mut events = Vec::new();
        for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let event: Event = serde_json::from_slice(line)
                .map_err(|source| StoreError::Corrupt { path: path.clone(), line: i + 1, source })?;
            events.push(event);
        }
        let first = events.first().ok_or_else(|| StoreError::Replay {
            path: path.clone(),
            line: 1,
            source: SessionError::Invalid("empty event log".into()),
        })?;

        let snapshot = fs::read(dir.join(SNAPSHOT))
            .ok()
            .and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok())
            .filter(|s| s.events >= 1 && s.events <= events.len());
        let (mut record, start) = match snapshot {
            Some(s) => (s.record, s.events),
            None => {
                let r = SessionRecord::from_created(first)
                    .map_err(|source| StoreError::Replay { path: path.clone(), line: 1, source })?;
                (r, 1)
            }
        };
        for (i, event) in events.iter().enumerate().skip(start) {
            record
                .apply(event, ctx)
                .map_err(|source| StoreError::Replay { path: path.clone(), line: i + 1, source })?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        let log = SessionLog { dir: dir.to_owned(), file, len: complete as u64, events: events.len() };
        Ok((record, log))
    }
}
