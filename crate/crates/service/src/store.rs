//! Durable review state: an append-only JSONL log plus a compacting snapshot.
//!
//! Every mutation is appended and fsynced before the caller acknowledges it.
//! Replay applies the snapshot, then the log; a torn final line left by a
//! crash mid-append is discarded and truncated away.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::model::{Adjudication, ReviewItem, ReviewStatus};

pub const LOG_FILE: &str = "review.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogRecord {
    Enqueue { item: ReviewItem },
    Adjudicate { fragment_id: String, adjudication: Adjudication },
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Snapshot {
    items: Vec<ReviewItem>,
}

/// Apply one record to an item map. Records are idempotent so a log that
/// overlaps the snapshot replays cleanly.
pub fn apply(items: &mut BTreeMap<String, ReviewItem>, record: LogRecord) {
    match record {
        LogRecord::Enqueue { item } => {
            items.entry(item.fragment_id.clone()).or_insert(item);
        }
        LogRecord::Adjudicate {
            fragment_id,
            adjudication,
        } => {
            if let Some(item) = items.get_mut(&fragment_id) {
                if item.status == ReviewStatus::Pending {
                    item.status = ReviewStatus::Adjudicated;
                    item.adjudication = Some(adjudication);
                }
            }
        }
    }
}

pub struct Store {
    dir: PathBuf,
    log: File,
    records_since_snapshot: usize,
    compact_every: usize,
    sync: bool,
}

impl Store {
    /// Open `dir`, creating it if needed, and return the recovered items.
    pub fn open(dir: impl AsRef<Path>, compact_every: usize, sync: bool) -> Result<(Self, BTreeMap<String, ReviewItem>)> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| ServiceError::storage(&dir, e))?;
        let mut items = BTreeMap::new();

        let snap_path = dir.join(SNAPSHOT_FILE);
        if snap_path.exists() {
            let raw = fs::read(&snap_path).map_err(|e| ServiceError::storage(&snap_path, e))?;
            let snap: Snapshot = serde_json::from_slice(&raw).map_err(|e| ServiceError::CorruptLog {
                path: snap_path.clone(),
                line: 0,
                message: e.to_string(),
            })?;
            for item in snap.items {
                items.insert(item.fragment_id.clone(), item);
            }
        }

        let log_path = dir.join(LOG_FILE);
        let (records, good_len) = if log_path.exists() {
            read_log(&log_path)?
        } else {
            (Vec::new(), 0)
        };
        let replayed = records.len();
        for r in records {
            apply(&mut items, r);
        }

        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ServiceError::storage(&log_path, e))?;
        let on_disk = log.metadata().map_err(|e| ServiceError::storage(&log_path, e))?.len();
        if on_disk != good_len {
            tracing::warn!(path = %log_path.display(), dropped = on_disk - good_len, "truncating torn log tail");
            log.set_len(good_len).map_err(|e| ServiceError::storage(&log_path, e))?;
            log.sync_all().map_err(|e| ServiceError::storage(&log_path, e))?;
        }

        Ok((
            Store {
                dir,
                log,
                records_since_snapshot: replayed,
                compact_every: compact_every.max(1),
                sync,
            },
            items,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Append records as one write, then fsync.
    pub fn append(&mut self, records: &[LogRecord]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).expect("log records serialize");
            buf.push(b'\n');
        }
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(&buf).map_err(|e| ServiceError::storage(&path, e))?;
        if self.sync {
            self.log.sync_data().map_err(|e| ServiceError::storage(&path, e))?;
        }
        self.records_since_snapshot += records.len();
        Ok(())
    }

    /// Write a partial line without a newline, simulating a crash mid-append.
    pub fn append_torn(&mut self, record: &LogRecord) -> Result<()> {
        let line = serde_json::to_vec(record).expect("log records serialize");
        let path = self.dir.join(LOG_FILE);
        self.log
            .write_all(&line[..line.len() / 2])
            .map_err(|e| ServiceError::storage(&path, e))?;
        self.log.sync_data().map_err(|e| ServiceError::storage(&path, e))
    }

    pub fn needs_compaction(&self) -> bool {
        self.records_since_snapshot >= self.compact_every
    }

    /// Persist the full item set as a snapshot and empty the log.
    pub fn compact<'a>(&mut self, items: impl IntoIterator<Item = &'a ReviewItem>) -> Result<()> {
        let snap = Snapshot {
            items: items.into_iter().cloned().collect(),
        };
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let dest = self.dir.join(SNAPSHOT_FILE);
        {
            let mut f = File::create(&tmp).map_err(|e| ServiceError::storage(&tmp, e))?;
            serde_json::to_writer(&mut f, &snap).expect("snapshot serializes");
            f.sync_all().map_err(|e| ServiceError::storage(&tmp, e))?;
        }
        fs::rename(&tmp, &dest).map_err(|e| ServiceError::storage(&dest, e))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        // A crash here leaves a log that overlaps the snapshot; replay is idempotent.
        let log_path = self.dir.join(LOG_FILE);
        self.log.set_len(0).map_err(|e| ServiceError::storage(&log_path, e))?;
        self.log.sync_all().map_err(|e| ServiceError::storage(&log_path, e))?;
        self.records_since_snapshot = 0;
        Ok(())
    }
}

/// Parse the log, returning the records and the byte length of the valid
/// prefix. Only the final line may be malformed.
fn read_log(path: &Path) -> Result<(Vec<LogRecord>, u64)> {
    let file = File::open(path).map_err(|e| ServiceError::storage(path, e))?;
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    let mut pending_error: Option<(usize, String)> = None;
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| ServiceError::storage(path, e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if let Some((bad_line, message)) = pending_error.take() {
            return Err(ServiceError::CorruptLog {
                path: path.to_path_buf(),
                line: bad_line,
                message,
            });
        }
        let complete = line.ends_with('\n');
        match serde_json::from_str::<LogRecord>(line.trim_end()) {
            Ok(r) if complete => {
                records.push(r);
                good_len += n as u64;
            }
            Ok(_) => pending_error = Some((line_no, "unterminated record".into())),
            Err(e) => pending_error = Some((line_no, e.to_string())),
        }
    }
    if let Some((bad_line, message)) = pending_error {
        tracing::warn!(line = bad_line, %message, "discarding torn final log record");
    }
    Ok((records, good_len))
}
