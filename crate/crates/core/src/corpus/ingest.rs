//! Row-level ingestion with a rejection report.
//!
//! Every row is validated independently; the only cross-row state is the id
//! set used for duplicate handling, which depends on file order alone.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Read};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{timestamp, ChangeTicket, ClosureCode, IncidentTicket, Priority, ReleaseOutcome, ReleaseRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Change,
    Incident,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedJson,
    MissingField,
    MalformedTimestamp,
    UnknownEnum,
    DuplicateId,
    EmptyId,
    TimeOrder,
    InvalidValue,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::MalformedJson => "malformed_json",
            RejectReason::MissingField => "missing_field",
            RejectReason::MalformedTimestamp => "malformed_timestamp",
            RejectReason::UnknownEnum => "unknown_enum",
            RejectReason::DuplicateId => "duplicate_id",
            RejectReason::EmptyId => "empty_id",
            RejectReason::TimeOrder => "time_order",
            RejectReason::InvalidValue => "invalid_value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line_number: usize,
    pub reason_code: RejectReason,
    pub raw_excerpt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub struct IngestOutcome<T> {
    pub accepted: Vec<T>,
    pub rejections: Vec<Rejection>,
    /// Rows folded into an earlier row with the same id (incidents only).
    pub duplicates_collapsed: usize,
    pub rows_read: usize,
}

/// Field-level layout of a record type, used for pre-deserialisation checks
/// (so reject reasons are specific) and for the CSV adapter.
pub trait Record: Serialize + DeserializeOwned + Clone {
    const KIND: RecordKind;
    const REQUIRED: &'static [&'static str];
    const TIMESTAMPS: &'static [&'static str];
    const ENUMS: &'static [(&'static str, &'static [&'static str])];
    const NUMBERS: &'static [&'static str] = &[];
    const FLAGS: &'static [&'static str] = &[];
    const LISTS: &'static [&'static str] = &[];
    const MAPS: &'static [&'static str] = &[];
    /// Whether a repeated id is collapsed (last wins) instead of rejected.
    const COLLAPSE_DUPLICATES: bool = false;

    fn id(&self) -> &str;

    /// Post-deserialisation invariant check.
    fn check(&self) -> Option<(RejectReason, &'static str)>;
}

impl Record for ChangeTicket {
    const KIND: RecordKind = RecordKind::Change;
    const REQUIRED: &'static [&'static str] = &["id", "start_time", "end_time", "closure_code"];
    const TIMESTAMPS: &'static [&'static str] = &["start_time", "end_time"];
    const ENUMS: &'static [(&'static str, &'static [&'static str])] =
        &[("closure_code", &ClosureCode::ALL)];
    const NUMBERS: &'static [&'static str] = &["impacted_services", "outage_total_duration"];
    const FLAGS: &'static [&'static str] = &[
        "sox_critical",
        "automated_deployment",
        "fallback_available",
        "redundant_architecture",
    ];
    const MAPS: &'static [&'static str] = &["baseline_inputs"];

    fn id(&self) -> &str {
        &self.id
    }

    fn check(&self) -> Option<(RejectReason, &'static str)> {
        if self.id.trim().is_empty() {
            return Some((RejectReason::EmptyId, "id"));
        }
        if self.start_time > self.end_time {
            return Some((RejectReason::TimeOrder, "end_time"));
        }
        if matches!(self.outage_total_duration, Some(d) if !d.is_finite() || d < 0.0) {
            return Some((RejectReason::InvalidValue, "outage_total_duration"));
        }
        None
    }
}

impl Record for IncidentTicket {
    const KIND: RecordKind = RecordKind::Incident;
    const REQUIRED: &'static [&'static str] = &["id", "priority", "opened_at"];
    const TIMESTAMPS: &'static [&'static str] = &["opened_at"];
    const ENUMS: &'static [(&'static str, &'static [&'static str])] = &[("priority", &Priority::ALL)];
    const COLLAPSE_DUPLICATES: bool = true;

    fn id(&self) -> &str {
        &self.id
    }

    fn check(&self) -> Option<(RejectReason, &'static str)> {
        if self.id.trim().is_empty() {
            return Some((RejectReason::EmptyId, "id"));
        }
        None
    }
}

impl Record for ReleaseRecord {
    const KIND: RecordKind = RecordKind::Release;
    const REQUIRED: &'static [&'static str] = &["id", "it_product", "start_time", "end_time", "outcome"];
    const TIMESTAMPS: &'static [&'static str] = &["start_time", "end_time"];
    const ENUMS: &'static [(&'static str, &'static [&'static str])] =
        &[("outcome", &ReleaseOutcome::ALL)];
    const FLAGS: &'static [&'static str] = &["po_approved", "peer_reviewed"];
    const LISTS: &'static [&'static str] = &["related_changes"];

    fn id(&self) -> &str {
        &self.id
    }

    fn check(&self) -> Option<(RejectReason, &'static str)> {
        if self.id.trim().is_empty() {
            return Some((RejectReason::EmptyId, "id"));
        }
        if self.start_time > self.end_time {
            return Some((RejectReason::TimeOrder, "end_time"));
        }
        None
    }
}

const EXCERPT_CHARS: usize = 160;

fn excerpt(raw: &str) -> String {
    raw.chars().take(EXCERPT_CHARS).collect()
}

fn present<'a>(obj: &'a Map<String, Value>, field: &str) -> Option<&'a Value> {
    obj.get(field).filter(|v| !v.is_null())
}

/// Validates one decoded row. Returns the record or the reason and field.
fn validate_row<T: Record>(value: Value) -> std::result::Result<T, (RejectReason, Option<String>)> {
    let Value::Object(obj) = &value else {
        return Err((RejectReason::MalformedJson, None));
    };
    for field in T::REQUIRED {
        if present(obj, field).is_none() {
            return Err((RejectReason::MissingField, Some((*field).to_string())));
        }
    }
    for field in T::TIMESTAMPS {
        if let Some(v) = present(obj, field) {
            let ok = v.as_str().and_then(timestamp::parse).is_some();
            if !ok {
                return Err((RejectReason::MalformedTimestamp, Some((*field).to_string())));
            }
        }
    }
    for (field, allowed) in T::ENUMS {
        if let Some(v) = present(obj, field) {
            let ok = v.as_str().is_some_and(|s| allowed.contains(&s));
            if !ok {
                return Err((RejectReason::UnknownEnum, Some((*field).to_string())));
            }
        }
    }
    let record: T = serde_json::from_value(value).map_err(|_| (RejectReason::InvalidValue, None))?;
    if let Some((reason, field)) = record.check() {
        return Err((reason, Some(field.to_string())));
    }
    Ok(record)
}

/// Core ingestion path over `(line_number, raw_text, decoded)` rows.
pub fn ingest_values<T: Record>(
    rows: impl IntoIterator<Item = (usize, String, Option<Value>)>,
) -> IngestOutcome<T> {
    let mut accepted: Vec<T> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut rejections = Vec::new();
    let mut duplicates_collapsed = 0;
    let mut rows_read = 0;

    for (line_number, raw, decoded) in rows {
        rows_read += 1;
        let reject = |reason, field| Rejection {
            line_number,
            reason_code: reason,
            raw_excerpt: excerpt(&raw),
            field,
        };
        let Some(value) = decoded else {
            rejections.push(reject(RejectReason::MalformedJson, None));
            continue;
        };
        match validate_row::<T>(value) {
            Err((reason, field)) => rejections.push(reject(reason, field)),
            Ok(record) => match by_id.get(record.id()) {
                Some(&slot) if T::COLLAPSE_DUPLICATES => {
                    accepted[slot] = record;
                    duplicates_collapsed += 1;
                }
                Some(_) => rejections.push(reject(RejectReason::DuplicateId, Some("id".into()))),
                None => {
                    by_id.insert(record.id().to_string(), accepted.len());
                    accepted.push(record);
                }
            },
        }
    }
    IngestOutcome {
        accepted,
        rejections,
        duplicates_collapsed,
        rows_read,
    }
}

/// Ingests UTF-8 JSON-lines. Blank lines are skipped and not counted.
pub fn ingest_jsonl<T: Record, R: BufRead>(reader: R) -> Result<IngestOutcome<T>> {
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let decoded = serde_json::from_str::<Value>(&line).ok();
        rows.push((idx + 1, line, decoded));
    }
    Ok(ingest_values(rows))
}

/// Ingests CSV with a header row naming the same fields as the JSON layout.
/// Empty cells are missing. Lists use `;` separators; map fields accept either
/// a JSON object in one column or `map.key` columns.
pub fn ingest_csv<T: Record, R: Read>(reader: R) -> Result<IngestOutcome<T>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidInput(format!("csv header: {e}")))?
        .clone();
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        // header is line 1
        let line_number = idx + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) if e.is_io_error() => {
                return Err(Error::InvalidInput(format!("csv read failure: {e}")));
            }
            Err(e) => {
                rows.push((line_number, e.to_string(), None));
                continue;
            }
        };
        let raw = rec.iter().collect::<Vec<_>>().join(",");
        rows.push((line_number, raw, csv_row_to_value::<T>(&headers, &rec)));
    }
    Ok(ingest_values(rows))
}

fn csv_row_to_value<T: Record>(headers: &csv::StringRecord, rec: &csv::StringRecord) -> Option<Value> {
    let mut obj = Map::new();
    let mut maps: BTreeMap<String, Map<String, Value>> = BTreeMap::new();
    for (name, cell) in headers.iter().zip(rec.iter()) {
        if cell.is_empty() {
            continue;
        }
        if let Some((map_name, key)) = name.split_once('.') {
            if T::MAPS.contains(&map_name) {
                maps.entry(map_name.to_string())
                    .or_default()
                    .insert(key.to_string(), Value::String(cell.to_string()));
                continue;
            }
        }
        let value = if T::NUMBERS.contains(&name) {
            cell.parse::<f64>()
                .ok()
                .and_then(|f| {
                    if f.fract() == 0.0 && f >= 0.0 && f <= u32::MAX as f64 {
                        Some(Value::from(f as u64))
                    } else {
                        serde_json::Number::from_f64(f).map(Value::Number)
                    }
                })
                .unwrap_or_else(|| Value::String(cell.to_string()))
        } else if T::FLAGS.contains(&name) {
            match cell.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" | "y" => Value::Bool(true),
                "false" | "0" | "no" | "n" => Value::Bool(false),
                _ => Value::String(cell.to_string()),
            }
        } else if T::LISTS.contains(&name) {
            Value::Array(
                cell.split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Value::String(s.to_string()))
                    .collect(),
            )
        } else if T::MAPS.contains(&name) {
            match serde_json::from_str::<Value>(cell) {
                Ok(v @ Value::Object(_)) => v,
                _ => return None,
            }
        } else {
            Value::String(cell.to_string())
        };
        obj.insert(name.to_string(), value);
    }
    for (name, map) in maps {
        let merged = obj
            .entry(name)
            .or_insert_with(|| Value::Object(Map::new()));
        if let Value::Object(existing) = merged {
            existing.extend(map);
        }
    }
    Some(Value::Object(obj))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHANGE: &str = r#"{"id":"CHG0000001","short_description":"patch db","full_description":"apply patch","ci_name":"db01","start_time":"2023-05-01T10:00:00Z","end_time":"2023-05-01T11:00:00Z","closure_code":"successful","it_product":"PRD-1"}"#;

    fn jsonl<T: Record>(text: &str) -> IngestOutcome<T> {
        ingest_jsonl(text.as_bytes()).unwrap()
    }

    #[test]
    fn well_formed_change_is_accepted() {
        let out = jsonl::<ChangeTicket>(CHANGE);
        assert_eq!(out.accepted.len(), 1);
        assert!(out.rejections.is_empty());
        assert_eq!(out.accepted[0].it_product.as_deref(), Some("PRD-1"));
    }

    #[test]
    fn absent_it_product_is_missing_not_empty() {
        let row = CHANGE.replace(r#","it_product":"PRD-1""#, "");
        let out = jsonl::<ChangeTicket>(&row);
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].it_product, None);
        let null_row = CHANGE.replace(r#""PRD-1""#, "null");
        assert_eq!(jsonl::<ChangeTicket>(&null_row).accepted[0].it_product, None);
    }

    #[test]
    fn malformed_incident_timestamp_is_rejected() {
        let row = r#"{"id":"INC1","priority":"P1","opened_at":"not-a-date","closure_code":"Solved"}"#;
        let out = jsonl::<IncidentTicket>(row);
        assert!(out.accepted.is_empty());
        assert_eq!(out.rejections[0].reason_code, RejectReason::MalformedTimestamp);
        assert_eq!(out.rejections[0].line_number, 1);
        assert_eq!(out.rejections[0].field.as_deref(), Some("opened_at"));
    }

    #[test]
    fn unknown_enum_and_missing_timestamp() {
        let bad_enum = CHANGE.replace("\"successful\"", "\"exploded\"");
        assert_eq!(
            jsonl::<ChangeTicket>(&bad_enum).rejections[0].reason_code,
            RejectReason::UnknownEnum
        );
        let no_start = CHANGE.replace(r#""start_time":"2023-05-01T10:00:00Z","#, "");
        let out = jsonl::<ChangeTicket>(&no_start);
        assert_eq!(out.rejections[0].reason_code, RejectReason::MissingField);
        assert_eq!(out.rejections[0].field.as_deref(), Some("start_time"));
    }

    #[test]
    fn start_after_end_is_rejected() {
        let row = CHANGE.replace("11:00:00Z", "09:00:00Z");
        assert_eq!(
            jsonl::<ChangeTicket>(&row).rejections[0].reason_code,
            RejectReason::TimeOrder
        );
    }

    #[test]
    fn duplicate_change_rejected_duplicate_incident_collapsed() {
        let text = format!("{CHANGE}\n{CHANGE}\n");
        let out = jsonl::<ChangeTicket>(&text);
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.rejections[0].reason_code, RejectReason::DuplicateId);
        assert_eq!(out.rejections[0].line_number, 2);

        let a = r#"{"id":"INC1","priority":"P1","opened_at":"2023-05-01T00:00:00Z","closure_code":"Solved"}"#;
        let b = r#"{"id":"INC1","priority":"P2","opened_at":"2023-05-01T00:00:00Z","closure_code":"Solved"}"#;
        let out = jsonl::<IncidentTicket>(&format!("{a}\n{b}"));
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].priority, Priority::P2);
        assert_eq!(out.duplicates_collapsed, 1);
    }

    #[test]
    fn garbage_line_is_malformed_json() {
        let out = jsonl::<ChangeTicket>("{not json");
        assert_eq!(out.rejections[0].reason_code, RejectReason::MalformedJson);
    }

    #[test]
    fn csv_adapter_reads_same_fields() {
        let csv = "id,short_description,start_time,end_time,closure_code,impacted_services,sox_critical,it_product,baseline_inputs.deployment_complexity\n\
                   CHG1,fix,2023-05-01T10:00:00Z,2023-05-01T11:00:00Z,failed,4,yes,,high\n\
                   CHG2,fix,2023-05-01T10:00:00Z,bogus,failed,,,,\n";
        let out = ingest_csv::<ChangeTicket, _>(csv.as_bytes()).unwrap();
        assert_eq!(out.accepted.len(), 1);
        let c = &out.accepted[0];
        assert_eq!(c.impacted_services, Some(4));
        assert_eq!(c.sox_critical, Some(true));
        assert_eq!(c.it_product, None);
        assert_eq!(c.baseline_inputs.get("deployment_complexity").map(String::as_str), Some("high"));
        assert_eq!(out.rejections.len(), 1);
        assert_eq!(out.rejections[0].line_number, 3);
        assert_eq!(out.rejections[0].reason_code, RejectReason::MalformedTimestamp);
    }

    #[test]
    fn csv_release_lists() {
        let csv = "id,it_product,start_time,end_time,outcome,po_approved,related_changes\n\
                   REL1,PRD-1,2023-05-01,2023-05-02,partial_success,true,CHG1;CHG2\n";
        let out = ingest_csv::<ReleaseRecord, _>(csv.as_bytes()).unwrap();
        assert_eq!(out.accepted[0].related_changes, vec!["CHG1", "CHG2"]);
        assert_eq!(out.accepted[0].outcome, ReleaseOutcome::PartialSuccess);
    }
}
