//! Durable, append-only upload queue.
//!
//! A queue is a directory holding three line-oriented files:
//!
//! * `pending.log`: one JSON [`ReadingRecord`] per line, in enqueue order.
//!   Every record ever enqueued is appended here before `enqueue` returns.
//! * `acked.log`: one acknowledged `reading_id` per line. Never truncated, so
//!   ids stay known after compaction.
//! * `dead.log`: one JSON [`DeadLetter`] per line for records the endpoint
//!   rejected permanently.
//!
//! The pending set is `pending.log` minus the ids in `acked.log` and
//! `dead.log`. Each append is followed by `fsync`. A trailing line without
//! its newline (a write interrupted by a crash) is discarded on open.
//! [`UploadQueue::compact`] rewrites `pending.log` to the live records via a
//! temporary file and an atomic rename.

use std::collections::{HashSet, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{io, Result, TelemetryError};
use crate::record::{format_timestamp, ReadingRecord};

pub const PENDING_FILE: &str = "pending.log";
pub const ACKED_FILE: &str = "acked.log";
pub const DEAD_FILE: &str = "dead.log";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub reading_id: String,
    pub reason: String,
    pub record: ReadingRecord,
}

#[derive(Debug)]
struct Inner {
    pending_log: File,
    acked_log: File,
    dead_log: File,
    pending: VecDeque<ReadingRecord>,
    known: HashSet<String>,
    acked: usize,
    dead: Vec<DeadLetter>,
    last_timestamp: Option<DateTime<Utc>>,
}

/// Safe to share between one enqueuing thread and one syncing thread; every
/// operation is atomic with respect to the others.
#[derive(Debug)]
pub struct UploadQueue {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

/// Reads complete lines, truncating an unterminated tail left by a crash.
fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io(path)(e)),
    };
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        let f = OpenOptions::new().write(true).open(path).map_err(io(path))?;
        f.set_len(complete as u64).map_err(io(path))?;
        f.sync_all().map_err(io(path))?;
    }
    let text = std::str::from_utf8(&bytes[..complete]).map_err(|e| TelemetryError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn parse_lines<T>(path: &Path, lines: &[String], parse: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            parse(l).map_err(|e| TelemetryError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io(path))
}

fn sync_dir(dir: &Path) -> Result<()> {
    File::open(dir).and_then(|d| d.sync_all()).map_err(io(dir))
}

fn append_line(file: &mut File, path: &Path, line: &str) -> Result<()> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line.as_bytes());
    buf.push(b'\n');
    file.write_all(&buf).map_err(io(path))?;
    file.sync_data().map_err(io(path))
}

impl UploadQueue {
    /// Opens (creating if needed) the queue stored in `dir`.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io(&dir))?;

        let pending_path = dir.join(PENDING_FILE);
        let acked_path = dir.join(ACKED_FILE);
        let dead_path = dir.join(DEAD_FILE);
        let logged = parse_lines(&pending_path, &read_lines(&pending_path)?, ReadingRecord::from_json)?;
        let acked_ids = read_lines(&acked_path)?;
        let dead = parse_lines(&dead_path, &read_lines(&dead_path)?, |l| Ok(serde_json::from_str::<DeadLetter>(l)?))?;

        let mut known: HashSet<String> = acked_ids.iter().cloned().collect();
        let acked = known.len();
        known.extend(dead.iter().map(|d| d.reading_id.clone()));
        let closed = known.clone();
        let last_timestamp = logged.iter().map(|r| r.timestamp_utc).max();
        let mut pending = VecDeque::new();
        for r in logged {
            if known.insert(r.reading_id.clone()) {
                pending.push_back(r);
            } else if !closed.contains(&r.reading_id) {
                return Err(TelemetryError::Corrupt {
                    path: pending_path,
                    line: 0,
                    message: format!("reading `{}` logged twice", r.reading_id),
                });
            }
        }

        let inner = Inner {
            pending_log: open_append(&pending_path)?,
            acked_log: open_append(&acked_path)?,
            dead_log: open_append(&dead_path)?,
            pending,
            known,
            acked,
            dead,
            last_timestamp,
        };
        sync_dir(&dir)?;
        Ok(Self {
            dir,
            inner: Mutex::new(inner),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic while holding the lock cannot leave the files half-updated
        // in a way `open` would not recover from, so poisoning is ignored.
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Durably appends `r`; returns once the record is on disk.
    pub fn enqueue(&self, r: &ReadingRecord) -> Result<()> {
        r.validate()?;
        let mut q = self.lock();
        if q.known.contains(&r.reading_id) {
            return Err(TelemetryError::DuplicateId(r.reading_id.clone()));
        }
        if let Some(prev) = q.last_timestamp {
            if r.timestamp_utc < prev {
                return Err(TelemetryError::NonMonotonic {
                    id: r.reading_id.clone(),
                    timestamp: format_timestamp(&r.timestamp_utc),
                    previous: format_timestamp(&prev),
                });
            }
        }
        let line = r.to_json_line()?;
        append_line(&mut q.pending_log, &self.dir.join(PENDING_FILE), &line)?;
        q.known.insert(r.reading_id.clone());
        q.last_timestamp = Some(r.timestamp_utc);
        q.pending.push_back(r.clone());
        Ok(())
    }

    /// Oldest pending record.
    pub fn peek(&self) -> Option<ReadingRecord> {
        self.lock().pending.front().cloned()
    }

    pub fn pending(&self) -> Vec<ReadingRecord> {
        self.lock().pending.iter().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.lock().pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of ids acknowledged over the queue's lifetime.
    pub fn acked_count(&self) -> usize {
        self.lock().acked
    }

    /// Every id the queue has seen (pending, acknowledged or dead-lettered).
    pub fn known_count(&self) -> usize {
        self.lock().known.len()
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.lock().dead.clone()
    }

    fn take_pending(q: &mut Inner, id: &str) -> Option<ReadingRecord> {
        let pos = q.pending.iter().position(|r| r.reading_id == id)?;
        q.pending.remove(pos)
    }

    /// Records the endpoint's acknowledgment of `id`. Returns `false` when
    /// `id` is not pending.
    pub fn ack(&self, id: &str) -> Result<bool> {
        let mut q = self.lock();
        if !q.pending.iter().any(|r| r.reading_id == id) {
            return Ok(false);
        }
        append_line(&mut q.acked_log, &self.dir.join(ACKED_FILE), id)?;
        Self::take_pending(&mut q, id);
        q.acked += 1;
        Ok(true)
    }

    /// Moves a pending record to the dead-letter log.
    pub fn dead_letter(&self, id: &str, reason: &str) -> Result<bool> {
        let mut q = self.lock();
        let Some(record) = q.pending.iter().find(|r| r.reading_id == id).cloned() else {
            return Ok(false);
        };
        let d = DeadLetter {
            reading_id: id.to_owned(),
            reason: reason.replace('\n', " "),
            record,
        };
        append_line(&mut q.dead_log, &self.dir.join(DEAD_FILE), &serde_json::to_string(&d)?)?;
        Self::take_pending(&mut q, id);
        q.dead.push(d);
        Ok(true)
    }

    /// Rewrites `pending.log` to hold only the live records.
    pub fn compact(&self) -> Result<()> {
        let mut q = self.lock();
        let path = self.dir.join(PENDING_FILE);
        let tmp = self.dir.join(format!("{PENDING_FILE}.tmp"));
        let mut body = String::new();
        for r in &q.pending {
            body.push_str(&r.to_json_line()?);
            body.push('\n');
        }
        {
            let mut f = File::create(&tmp).map_err(io(&tmp))?;
            f.write_all(body.as_bytes()).map_err(io(&tmp))?;
            f.sync_all().map_err(io(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io(&path))?;
        sync_dir(&self.dir)?;
        q.pending_log = open_append(&path)?;
        Ok(())
    }
}
