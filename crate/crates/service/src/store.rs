//! Append-only JSON-lines record log with an in-memory index.
//!
//! Every insert or update appends the full record as one line. On open the
//! log is replayed and the last line for each id wins. A line that fails to
//! parse (for example one torn by a crash mid-write) is skipped.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use roast_core::model::Prediction;
use roast_core::RoastClass;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// One saved prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub roast_level: RoastClass,
    /// `100 * max(probabilities)` rounded to one decimal.
    pub probability_percent: f64,
    pub description: String,
    /// Path of the stored upload, relative to the store directory.
    pub image_ref: String,
    /// Class probabilities in class-index order: dark, green, light, medium.
    pub probabilities: [f64; RoastClass::COUNT],
}

impl HistoryRecord {
    pub fn new(prediction: &Prediction, description: String, image_ref: String) -> Self {
        HistoryRecord {
            id: uuid::Uuid::new_v4().to_string(),
            timestamp: Utc::now(),
            roast_level: prediction.predicted_class,
            probability_percent: round_percent(prediction.confidence_percent),
            description,
            image_ref,
            probabilities: prediction.probabilities,
        }
    }
}

pub fn round_percent(p: f64) -> f64 {
    (p * 10.0).round() / 10.0
}

#[derive(Debug, Default)]
struct Index {
    records: Vec<HistoryRecord>,
    by_id: HashMap<String, usize>,
}

impl Index {
    fn upsert(&mut self, r: HistoryRecord) {
        match self.by_id.get(&r.id) {
            Some(&i) => self.records[i] = r,
            None => {
                self.by_id.insert(r.id.clone(), self.records.len());
                self.records.push(r);
            }
        }
    }
}

#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    index: RwLock<Index>,
    writer: Mutex<File>,
    skipped_lines: usize,
}

impl RecordStore {
    /// Opens or creates the log at `path` and replays it.
    pub fn open(path: &Path) -> ServiceResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ServiceError::io(dir, e))?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::io(path, e))?;

        let mut index = Index::default();
        let mut skipped_lines = 0;
        for (n, line) in BufReader::new(&file).split(b'\n').enumerate() {
            let line = line.map_err(|e| ServiceError::io(path, e))?;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            match serde_json::from_slice::<HistoryRecord>(&line) {
                Ok(r) => index.upsert(r),
                Err(e) => {
                    log::warn!("{}: skipping unreadable line {}: {e}", path.display(), n + 1);
                    skipped_lines += 1;
                }
            }
        }

        // A crash can leave a partial line without its newline; start the
        // next record on a fresh line.
        let len = file.metadata().map_err(|e| ServiceError::io(path, e))?.len();
        if len > 0 {
            let mut last = [0u8];
            file.seek(SeekFrom::Start(len - 1)).map_err(|e| ServiceError::io(path, e))?;
            file.read_exact(&mut last).map_err(|e| ServiceError::io(path, e))?;
            if last[0] != b'\n' {
                file.write_all(b"\n").map_err(|e| ServiceError::io(path, e))?;
            }
        }

        Ok(RecordStore { path: path.to_path_buf(), index: RwLock::new(index), writer: Mutex::new(file), skipped_lines })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Lines ignored during replay.
    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("index lock").records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes one line and updates the index. The caller holds the writer
    /// lock, so log order and index order agree.
    fn append(&self, file: &mut File, record: HistoryRecord) -> ServiceResult<()> {
        let mut line = serde_json::to_vec(&record).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| ServiceError::io(&self.path, e))?;
        file.flush().map_err(|e| ServiceError::io(&self.path, e))?;
        self.index.write().expect("index lock").upsert(record);
        Ok(())
    }

    pub fn insert(&self, record: HistoryRecord) -> ServiceResult<()> {
        let mut file = self.writer.lock().expect("writer lock");
        if self.get(&record.id).is_some() {
            return Err(ServiceError::Internal(format!("duplicate record id {}", record.id)));
        }
        self.append(&mut file, record)
    }

    pub fn get(&self, id: &str) -> Option<HistoryRecord> {
        let index = self.index.read().expect("index lock");
        index.by_id.get(id).map(|&i| index.records[i].clone())
    }

    pub fn set_description(&self, id: &str, description: String) -> ServiceResult<HistoryRecord> {
        let mut file = self.writer.lock().expect("writer lock");
        let mut record = self.get(id).ok_or_else(|| ServiceError::NotFound(id.to_string()))?;
        record.description = description;
        self.append(&mut file, record.clone())?;
        Ok(record)
    }

    /// Newest first by timestamp, ties broken by id.
    pub fn list(&self, limit: usize, offset: usize) -> Vec<HistoryRecord> {
        let index = self.index.read().expect("index lock");
        let mut refs: Vec<&HistoryRecord> = index.records.iter().collect();
        refs.sort_by(|a, b| b.timestamp.cmp(&a.timestamp).then_with(|| a.id.cmp(&b.id)));
        refs.into_iter().skip(offset).take(limit).cloned().collect()
    }
}
