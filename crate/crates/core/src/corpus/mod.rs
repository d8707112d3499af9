//! ITSM record types: change tickets, incident tickets and release records.
//!
//! Every optional attribute is an `Option` and is omitted on write, so a
//! missing value never collapses into a sentinel such as `""` or `0`.

mod ingest;
pub mod timestamp;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{
    ingest_csv, ingest_jsonl, ingest_values, IngestOutcome, Record, RecordKind, RejectReason,
    Rejection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureCode {
    Successful,
    SuccessfulWithProblems,
    Failed,
    Cancelled,
}

impl ClosureCode {
    pub const ALL: [&'static str; 4] = [
        "successful",
        "successful_with_problems",
        "failed",
        "cancelled",
    ];

    pub fn is_successful(self) -> bool {
        matches!(self, ClosureCode::Successful)
    }
}

/// Incident priority. Ordering follows severity: `P0Major < P1 < P2`, so the
/// minimum of a set of priorities is the most severe one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    #[serde(rename = "P0_major")]
    P0Major,
    P1,
    P2,
}

impl Priority {
    pub const ALL: [&'static str; 3] = ["P0_major", "P1", "P2"];

    pub fn level(self) -> u8 {
        match self {
            Priority::P0Major => 0,
            Priority::P1 => 1,
            Priority::P2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Priority::P0Major => "P0_major",
            Priority::P1 => "P1",
            Priority::P2 => "P2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReleaseOutcome {
    Success,
    PartialSuccess,
    Failure,
}

impl ReleaseOutcome {
    pub const ALL: [&'static str; 3] = ["success", "partial_success", "failure"];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeTicket {
    pub id: String,
    #[serde(default)]
    pub short_description: String,
    #[serde(default)]
    pub full_description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_config_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_owner: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_offerings: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cab_approval_group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub it_product: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidentiality_rating: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrity_rating: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub availability_rating: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sox_critical: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub automated_deployment: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_available: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redundant_architecture: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub change_state: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impacted_services: Option<u32>,
    /// Minutes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outage_total_duration: Option<f64>,
    #[serde(with = "timestamp")]
    pub start_time: DateTime<Utc>,
    #[serde(with = "timestamp")]
    pub end_time: DateTime<Utc>,
    pub closure_code: ClosureCode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baseline_inputs: BTreeMap<String, String>,
}

impl ChangeTicket {
    /// A change with only the required fields; every optional field missing.
    pub fn new(id: impl Into<String>, start_time: DateTime<Utc>, end_time: DateTime<Utc>, closure_code: ClosureCode) -> Self {
        Self {
            id: id.into(),
            short_description: String::new(),
            full_description: String::new(),
            ci_name: None,
            ci_config_group: None,
            ci_owner: None,
            assignment_group: None,
            support_offerings: None,
            cab_approval_group: None,
            it_product: None,
            confidentiality_rating: None,
            integrity_rating: None,
            availability_rating: None,
            sox_critical: None,
            automated_deployment: None,
            fallback_available: None,
            redundant_architecture: None,
            change_category: None,
            change_state: None,
            impacted_services: None,
            outage_total_duration: None,
            start_time,
            end_time,
            closure_code,
            baseline_inputs: BTreeMap::new(),
        }
    }

    /// Looks up a field by name as a string, falling back to `baseline_inputs`.
    /// Used by the rule engine, which addresses factors by source-field name.
    pub fn field_value(&self, field: &str) -> Option<String> {
        let opt = |v: &Option<String>| v.clone();
        let flag = |v: &Option<bool>| v.map(|b| b.to_string());
        match field {
            "id" => Some(self.id.clone()),
            "short_description" => Some(self.short_description.clone()),
            "full_description" => Some(self.full_description.clone()),
            "ci_name" => opt(&self.ci_name),
            "ci_config_group" => opt(&self.ci_config_group),
            "ci_owner" => opt(&self.ci_owner),
            "assignment_group" => opt(&self.assignment_group),
            "support_offerings" => opt(&self.support_offerings),
            "cab_approval_group" => opt(&self.cab_approval_group),
            "it_product" => opt(&self.it_product),
            "confidentiality_rating" => opt(&self.confidentiality_rating),
            "integrity_rating" => opt(&self.integrity_rating),
            "availability_rating" => opt(&self.availability_rating),
            "sox_critical" => flag(&self.sox_critical),
            "automated_deployment" => flag(&self.automated_deployment),
            "fallback_available" => flag(&self.fallback_available),
            "redundant_architecture" => flag(&self.redundant_architecture),
            "change_category" => opt(&self.change_category),
            "change_state" => opt(&self.change_state),
            "impacted_services" => self.impacted_services.map(|v| v.to_string()),
            "outage_total_duration" => self.outage_total_duration.map(|v| v.to_string()),
            other => self.baseline_inputs.get(other).cloned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentTicket {
    pub id: String,
    pub priority: Priority,
    #[serde(with = "timestamp")]
    pub opened_at: DateTime<Utc>,
    #[serde(default)]
    pub closure_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caused_by_change: Option<String>,
    #[serde(default)]
    pub solution_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub id: String,
    pub it_product: String,
    #[serde(with = "timestamp")]
    pub start_time: DateTime<Utc>,
    #[serde(with = "timestamp")]
    pub end_time: DateTime<Utc>,
    pub outcome: ReleaseOutcome,
    #[serde(default)]
    pub po_approved: bool,
    #[serde(default)]
    pub peer_reviewed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related_changes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Incident closure codes that mark an incident as irrelevant.
    pub irrelevant_closure_codes: Vec<String>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            irrelevant_closure_codes: vec!["Invalid event".into(), "Withdrawn by Customer".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<IncidentTicket>,
    pub filtered: usize,
    pub duplicates_collapsed: usize,
}

/// Collapses duplicate ids (last record wins, keeping the position of the
/// first occurrence) and drops incidents whose closure code is irrelevant.
pub fn filter_incidents(incidents: &[IncidentTicket], irrelevant_codes: &BTreeSet<String>) -> FilterOutcome {
    let mut order: Vec<&str> = Vec::new();
    let mut latest: BTreeMap<&str, &IncidentTicket> = BTreeMap::new();
    for inc in incidents {
        if latest.insert(inc.id.as_str(), inc).is_none() {
            order.push(inc.id.as_str());
        }
    }
    let duplicates_collapsed = incidents.len() - order.len();
    let mut retained = Vec::with_capacity(order.len());
    let mut filtered = 0;
    for id in order {
        let inc = latest[id];
        if irrelevant_codes.contains(inc.closure_code.as_str()) {
            filtered += 1;
        } else {
            retained.push(inc.clone());
        }
    }
    FilterOutcome {
        retained,
        filtered,
        duplicates_collapsed,
    }
}

/// An immutable snapshot of validated records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub changes: Vec<ChangeTicket>,
    pub incidents: Vec<IncidentTicket>,
    pub releases: Vec<ReleaseRecord>,
}

pub const CHANGES_FILE: &str = "changes.jsonl";
pub const INCIDENTS_FILE: &str = "incidents.jsonl";
pub const RELEASES_FILE: &str = "releases.jsonl";

impl Corpus {
    /// Loads a corpus directory, rejecting nothing silently: any invalid row is
    /// an error here. Use [`ingest_jsonl`] for lenient ingestion with a report.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let changes = load_strict::<ChangeTicket>(&dir.join(CHANGES_FILE), true)?;
        let incidents = load_strict::<IncidentTicket>(&dir.join(INCIDENTS_FILE), false)?;
        let releases = load_strict::<ReleaseRecord>(&dir.join(RELEASES_FILE), false)?;
        Ok(Self {
            changes,
            incidents,
            releases,
        })
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(CHANGES_FILE), &self.changes)?;
        write_jsonl(&dir.join(INCIDENTS_FILE), &self.incidents)?;
        write_jsonl(&dir.join(RELEASES_FILE), &self.releases)?;
        Ok(())
    }

    pub fn change_index(&self) -> BTreeMap<&str, usize> {
        self.changes
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect()
    }
}

fn load_strict<T: Record>(path: &Path, required: bool) -> Result<Vec<T>> {
    if !path.exists() && !required {
        return Ok(Vec::new());
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let outcome = ingest_jsonl::<T, _>(BufReader::new(file))?;
    if let Some(first) = outcome.rejections.first() {
        return Err(Error::InvalidInput(format!(
            "{}: line {} rejected ({})",
            path.display(),
            first.line_number,
            first.reason_code.as_str()
        )));
    }
    Ok(outcome.accepted)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn incident(id: &str, code: &str) -> IncidentTicket {
        IncidentTicket {
            id: id.into(),
            priority: Priority::P1,
            opened_at: Utc.with_ymd_and_hms(2023, 5, 1, 0, 0, 0).unwrap(),
            closure_code: code.into(),
            caused_by_change: None,
            solution_text: String::new(),
        }
    }

    fn irrelevant() -> BTreeSet<String> {
        CorpusConfig::default().irrelevant_closure_codes.into_iter().collect()
    }

    #[test]
    fn invalid_event_is_dropped() {
        let out = filter_incidents(&[incident("INC1", "Invalid event")], &irrelevant());
        assert!(out.retained.is_empty());
        assert_eq!(out.filtered, 1);
    }

    #[test]
    fn solved_is_retained() {
        let out = filter_incidents(&[incident("INC1", "Solved")], &irrelevant());
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.filtered, 0);
    }

    #[test]
    fn duplicate_ids_collapse_last_wins() {
        let mut second = incident("INC1", "Solved");
        second.solution_text = "second".into();
        let out = filter_incidents(&[incident("INC1", "Solved"), second], &irrelevant());
        assert_eq!(out.retained.len(), 1);
        assert_eq!(out.retained[0].solution_text, "second");
        assert_eq!(out.duplicates_collapsed, 1);
    }

    #[test]
    fn last_duplicate_decides_relevance() {
        let out = filter_incidents(
            &[incident("INC1", "Solved"), incident("INC1", "Withdrawn by Customer")],
            &irrelevant(),
        );
        assert!(out.retained.is_empty());
        assert_eq!(out.filtered + out.retained.len() + out.duplicates_collapsed, 2);
    }

    #[test]
    fn empty_input_is_empty_output() {
        let out = filter_incidents(&[], &irrelevant());
        assert!(out.retained.is_empty());
        assert_eq!(out.filtered, 0);
    }

    #[test]
    fn priority_order_is_severity() {
        assert!(Priority::P0Major < Priority::P1);
        assert_eq!([Priority::P2, Priority::P0Major].iter().min(), Some(&Priority::P0Major));
        assert_eq!(serde_json::to_string(&Priority::P0Major).unwrap(), "\"P0_major\"");
    }
}
