//! Append-only JSON-lines logs under the data directory.
//!
//! Layout:
//! - `changes.jsonl`, `incidents.jsonl`, `releases.jsonl`: ingested records
//! - `scores.jsonl`: one line per (model version, change) scored
//! - `feedback.jsonl`: reviewer feedback with sequence numbers
//! - `metrics/windows.json`: the published backtest series
//! - `registry/`: see [`crate::registry`]

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use changerisk::corpus::{CHANGES_FILE, INCIDENTS_FILE, RELEASES_FILE};
use changerisk::{ChangeTicket, Corpus, IncidentTicket, ReleaseRecord};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;

pub const SCORES_FILE: &str = "scores.jsonl";
pub const FEEDBACK_FILE: &str = "feedback.jsonl";
pub const METRICS_FILE: &str = "metrics/windows.json";

/// One JSON-lines file with a single serialized writer. Each append is
/// flushed and synced before it returns.
#[derive(Debug)]
pub struct AppendLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl AppendLog {
    /// Opens or creates `path`, dropping a torn final line left by a crash.
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut file = OpenOptions::new().create(true).read(true).append(true).open(path)?;
        let bytes = std::fs::read(path)?;
        if let Some(last) = bytes.last() {
            if *last != b'\n' {
                let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
                tracing::warn!(path = %path.display(), dropped = bytes.len() - keep, "truncating torn log tail");
                file.set_len(keep as u64)?;
                file.seek(SeekFrom::End(0))?;
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: Serialize>(&self, rows: &[T]) -> Result<(), ServiceError> {
        if rows.is_empty() {
            return Ok(());
        }
        let mut buf = Vec::new();
        for r in rows {
            serde_json::to_writer(&mut buf, r).map_err(|e| ServiceError::Storage(e.to_string()))?;
            buf.push(b'\n');
        }
        let mut f = self.file.lock().expect("log writer poisoned");
        f.write_all(&buf)?;
        f.sync_data()?;
        Ok(())
    }

    pub fn read_all<T: DeserializeOwned>(&self) -> Result<Vec<T>, ServiceError> {
        let _guard = self.file.lock().expect("log writer poisoned");
        read_lines(&self.path)
    }
}

fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| ServiceError::Storage(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub change_id: String,
    pub model_version: String,
    pub score: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Useful,
    NotUseful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Approve,
    Reject,
    Flag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub sequence: u64,
    pub change_id: String,
    pub verdict: Verdict,
    pub decision: Decision,
    pub reviewer: String,
    #[serde(with = "changerisk::corpus::timestamp")]
    pub timestamp: DateTime<Utc>,
    pub model_version: Option<String>,
}

/// The log files plus their in-memory mirror.
#[derive(Debug)]
pub struct Store {
    pub dir: PathBuf,
    pub changes_log: AppendLog,
    pub incidents_log: AppendLog,
    pub releases_log: AppendLog,
    pub scores_log: AppendLog,
    pub feedback_log: AppendLog,
    pub corpus: Corpus,
    pub change_pos: HashMap<String, usize>,
    /// model version → change id → score
    pub scores: HashMap<String, HashMap<String, u8>>,
    pub feedback: Vec<FeedbackEvent>,
    feedback_keys: HashSet<(String, String, DateTime<Utc>)>,
}

impl Store {
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let changes_log = AppendLog::open(&dir.join(CHANGES_FILE))?;
        let incidents_log = AppendLog::open(&dir.join(INCIDENTS_FILE))?;
        let releases_log = AppendLog::open(&dir.join(RELEASES_FILE))?;
        let scores_log = AppendLog::open(&dir.join(SCORES_FILE))?;
        let feedback_log = AppendLog::open(&dir.join(FEEDBACK_FILE))?;

        let changes: Vec<ChangeTicket> = changes_log.read_all()?;
        let mut incidents: Vec<IncidentTicket> = Vec::new();
        let mut incident_pos: HashMap<String, usize> = HashMap::new();
        for inc in incidents_log.read_all::<IncidentTicket>()? {
            match incident_pos.get(&inc.id) {
                Some(&p) => incidents[p] = inc,
                None => {
                    incident_pos.insert(inc.id.clone(), incidents.len());
                    incidents.push(inc);
                }
            }
        }
        let releases: Vec<ReleaseRecord> = releases_log.read_all()?;
        let change_pos = changes.iter().enumerate().map(|(i, c)| (c.id.clone(), i)).collect();

        let mut scores: HashMap<String, HashMap<String, u8>> = HashMap::new();
        for r in scores_log.read_all::<ScoreRecord>()? {
            scores.entry(r.model_version).or_default().insert(r.change_id, r.score);
        }
        let feedback: Vec<FeedbackEvent> = feedback_log.read_all()?;
        let feedback_keys = feedback
            .iter()
            .map(|f| (f.change_id.clone(), f.reviewer.clone(), f.timestamp))
            .collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            changes_log,
            incidents_log,
            releases_log,
            scores_log,
            feedback_log,
            corpus: Corpus {
                changes,
                incidents,
                releases,
            },
            change_pos,
            scores,
            feedback,
            feedback_keys,
        })
    }

    pub fn change(&self, id: &str) -> Option<&ChangeTicket> {
        self.change_pos.get(id).map(|&i| &self.corpus.changes[i])
    }

    pub fn is_known_change(&self, id: &str) -> bool {
        self.change_pos.contains_key(id) || self.scores.values().any(|m| m.contains_key(id))
    }

    /// Appends changes whose ids are new; returns them.
    pub fn add_changes(&mut self, changes: Vec<ChangeTicket>) -> Result<Vec<ChangeTicket>, ServiceError> {
        self.changes_log.append(&changes)?;
        for c in &changes {
            self.change_pos.insert(c.id.clone(), self.corpus.changes.len());
            self.corpus.changes.push(c.clone());
        }
        Ok(changes)
    }

    /// Appends incidents; a repeated id replaces the earlier record.
    pub fn add_incidents(&mut self, incidents: Vec<IncidentTicket>) -> Result<(), ServiceError> {
        self.incidents_log.append(&incidents)?;
        for inc in incidents {
            match self.corpus.incidents.iter().position(|i| i.id == inc.id) {
                Some(p) => self.corpus.incidents[p] = inc,
                None => self.corpus.incidents.push(inc),
            }
        }
        Ok(())
    }

    pub fn add_releases(&mut self, releases: Vec<ReleaseRecord>) -> Result<(), ServiceError> {
        self.releases_log.append(&releases)?;
        self.corpus.releases.extend(releases);
        Ok(())
    }

    /// Records scores not already stored for their model version.
    pub fn add_scores(&mut self, records: Vec<ScoreRecord>) -> Result<usize, ServiceError> {
        let fresh: Vec<ScoreRecord> = records
            .into_iter()
            .filter(|r| self.scores.get(&r.model_version).map_or(true, |m| !m.contains_key(&r.change_id)))
            .collect();
        self.scores_log.append(&fresh)?;
        for r in &fresh {
            self.scores
                .entry(r.model_version.clone())
                .or_default()
                .insert(r.change_id.clone(), r.score);
        }
        Ok(fresh.len())
    }

    /// Assigns the next sequence number and appends. Fails on a repeated
    /// (change, reviewer, timestamp) key.
    pub fn add_feedback(&mut self, mut event: FeedbackEvent) -> Result<FeedbackEvent, ServiceError> {
        let key = (event.change_id.clone(), event.reviewer.clone(), event.timestamp);
        if self.feedback_keys.contains(&key) {
            return Err(ServiceError::Conflict(format!(
                "feedback for {} by {} at {} already recorded",
                event.change_id,
                event.reviewer,
                changerisk::corpus::timestamp::format(&event.timestamp)
            )));
        }
        event.sequence = self.feedback.last().map_or(1, |f| f.sequence + 1);
        self.feedback_log.append(std::slice::from_ref(&event))?;
        self.feedback_keys.insert(key);
        self.feedback.push(event.clone());
        Ok(event)
    }

    pub fn metrics(&self) -> Result<Option<serde_json::Value>, ServiceError> {
        let path = self.dir.join(METRICS_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ServiceError::Storage(format!("{}: {e}", path.display())))
    }
}

/// Writes the published backtest series where the service reads it.
pub fn publish_metrics(data_dir: &Path, series: &serde_json::Value) -> Result<(), ServiceError> {
    let path = data_dir.join(METRICS_FILE);
    let bytes = serde_json::to_vec_pretty(series).map_err(|e| ServiceError::Storage(e.to_string()))?;
    write_atomic(&path, &bytes)
}

/// Writes via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// SHA-256 over every file under `dir`, keyed by relative path, in path order.
pub fn store_digest(dir: &Path) -> Result<String, ServiceError> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).unwrap_or(&path).to_string_lossy().replace('\\', "/");
                out.insert(rel, path);
            }
        }
        Ok(())
    }
    let mut files = BTreeMap::new();
    walk(dir, dir, &mut files)?;
    let mut hasher = Sha256::new();
    for (rel, path) in files {
        let bytes = std::fs::read(&path)?;
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_tail_is_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        std::fs::write(&path, "{\"change_id\":\"A\",\"model_version\":\"m\",\"score\":3}\n{\"change_").unwrap();
        let log = AppendLog::open(&path).unwrap();
        log.append(&[ScoreRecord {
            change_id: "B".into(),
            model_version: "m".into(),
            score: 9,
        }])
        .unwrap();
        let rows: Vec<ScoreRecord> = log.read_all().unwrap();
        assert_eq!(rows.iter().map(|r| r.change_id.as_str()).collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn digest_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a"), "x").unwrap();
        let d1 = store_digest(dir.path()).unwrap();
        assert_eq!(d1, store_digest(dir.path()).unwrap());
        std::fs::write(dir.path().join("a"), "y").unwrap();
        let d2 = store_digest(dir.path()).unwrap();
        assert_ne!(d1, d2);
        std::fs::rename(dir.path().join("a"), dir.path().join("b")).unwrap();
        assert_ne!(d2, store_digest(dir.path()).unwrap());
    }
}
