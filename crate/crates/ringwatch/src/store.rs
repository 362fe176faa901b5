//! Durable detector state: an append-only event log plus periodic snapshots.
//!
//! `events.ndjson` receives one line per state transition and is never
//! rewritten. `snapshot.json` holds the full gallery as of some log sequence
//! number and is replaced atomically (write to a temporary file, then
//! rename). Opening a store loads the snapshot and replays the log entries
//! after it.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ringwatch_core::detect::{FlagRecord, GalleryEntry, GalleryState};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOG_FILE: &str = "events.ndjson";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const DEFAULT_SNAPSHOT_EVERY: u64 = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogEvent {
    Enroll { entry: GalleryEntry, flag: Option<FlagRecord> },
    Review { flag: FlagRecord },
}

#[derive(Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    #[serde(flatten)]
    event: LogEvent,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    state: GalleryState,
}

/// Applies one logged transition to `state`.
pub fn apply(state: &mut GalleryState, event: LogEvent) {
    match event {
        LogEvent::Enroll { entry, flag } => {
            if let Some(f) = flag {
                state.flags.insert(f.session_id.clone(), f);
            }
            state.entries.push(entry);
        }
        LogEvent::Review { flag } => {
            state.flags.insert(flag.session_id.clone(), flag);
        }
    }
}

pub struct Store {
    dir: PathBuf,
    log: File,
    seq: u64,
    snapshot_seq: u64,
    snapshot_every: u64,
}

impl Store {
    /// Opens (or creates) the store in `dir` and returns the recovered state.
    /// A torn final log line from an interrupted write is discarded.
    pub fn open(dir: &Path, snapshot_every: u64) -> Result<(Self, GalleryState)> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let (mut seq, mut state) = match std::fs::read(&snap_path) {
            Ok(bytes) => {
                let s: Snapshot = serde_json::from_slice(&bytes)
                    .map_err(|e| Error::Runtime(format!("{}: {e}", snap_path.display())))?;
                (s.seq, s.state)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => (0, GalleryState::default()),
            Err(e) => return Err(Error::Io { path: snap_path, source: e }),
        };
        let snapshot_seq = seq;
        let log_path = dir.join(LOG_FILE);
        let mut valid_len = 0u64;
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path).map_err(Error::io(&log_path))?);
            let mut lines = reader.split(b'\n').peekable();
            while let Some(line) = lines.next() {
                let line = line.map_err(Error::io(&log_path))?;
                let last = lines.peek().is_none();
                match serde_json::from_slice::<LogLine>(&line) {
                    Ok(l) => {
                        if l.seq > seq {
                            if l.seq != seq + 1 {
                                return Err(Error::Runtime(format!("log gap: expected seq {}, found {}", seq + 1, l.seq)));
                            }
                            apply(&mut state, l.event);
                            seq = l.seq;
                        }
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) if last => break,
                    Err(e) => return Err(Error::Runtime(format!("{}: corrupt log line: {e}", log_path.display()))),
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(Error::io(&log_path))?;
        // drop a torn tail so the next append starts on a fresh line
        if log.metadata().map_err(Error::io(&log_path))?.len() > valid_len {
            log.set_len(valid_len).map_err(Error::io(&log_path))?;
        }
        let store = Self { dir: dir.to_path_buf(), log, seq, snapshot_seq, snapshot_every: snapshot_every.max(1) };
        Ok((store, state))
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    /// Appends `event`; `state` must already include it and is snapshotted
    /// when enough events have accumulated.
    pub fn append(&mut self, event: LogEvent, state: &GalleryState) -> Result<()> {
        let line = LogLine { seq: self.seq + 1, event };
        let mut bytes = serde_json::to_vec(&line).map_err(|e| Error::Runtime(e.to_string()))?;
        bytes.push(b'\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&bytes).map_err(Error::io(&path))?;
        self.log.flush().map_err(Error::io(&path))?;
        self.seq += 1;
        if self.seq - self.snapshot_seq >= self.snapshot_every {
            self.snapshot(state)?;
        }
        Ok(())
    }

    pub fn snapshot(&mut self, state: &GalleryState) -> Result<()> {
        let path = self.dir.join(SNAPSHOT_FILE);
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let bytes = serde_json::to_vec(&Snapshot { seq: self.seq, state: state.clone() })
            .map_err(|e| Error::Runtime(e.to_string()))?;
        let mut f = File::create(&tmp).map_err(Error::io(&tmp))?;
        f.write_all(&bytes).map_err(Error::io(&tmp))?;
        f.sync_all().map_err(Error::io(&tmp))?;
        self.log.sync_data().map_err(Error::io(self.dir.join(LOG_FILE)))?;
        std::fs::rename(&tmp, &path).map_err(Error::io(&path))?;
        self.snapshot_seq = self.seq;
        Ok(())
    }
}

/// Canonical bytes of a gallery state, for comparing stores.
pub fn state_bytes(state: &GalleryState) -> Vec<u8> {
    serde_json::to_vec(state).expect("gallery state serializes")
}
