//! Trailing team aggregates keyed by IT product.
//!
//! Events are bucketed into complete ISO weeks (Monday 00:00 UTC) and
//! calendar months that end at or before the start of the bucket containing
//! `as_of`, so only events strictly before `as_of` are ever read. Changes and
//! releases are placed by `end_time`, incidents by `opened_at`.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Datelike, Duration, Months, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{ChangeTicket, IncidentTicket, ReleaseOutcome, ReleaseRecord};
use crate::linkage::ChangeIncidentLink;

pub const TEAM_METRICS: [&str; 6] = [
    "change_count",
    "pct_successful_changes",
    "incident_causing_changes",
    "high_priority_incidents",
    "pct_successful_releases",
    "release_count",
];

pub fn team_feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(12);
    for granularity in ["weekly", "monthly"] {
        for metric in TEAM_METRICS {
            names.push(format!("team_{metric}_median_{granularity}"));
        }
    }
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamConfig {
    pub weekly_lookback: u32,
    pub monthly_lookback: u32,
}

impl Default for TeamConfig {
    fn default() -> Self {
        Self {
            weekly_lookback: 12,
            monthly_lookback: 6,
        }
    }
}

/// Six medians per granularity, in [`TEAM_METRICS`] order. `NaN` is missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeamAggregates {
    pub weekly: [f64; 6],
    pub monthly: [f64; 6],
}

impl TeamAggregates {
    pub const MISSING: TeamAggregates = TeamAggregates {
        weekly: [f64::NAN; 6],
        monthly: [f64::NAN; 6],
    };

    pub fn values(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        out[..6].copy_from_slice(&self.weekly);
        out[6..].copy_from_slice(&self.monthly);
        out
    }

    pub fn is_all_missing(&self) -> bool {
        self.values().iter().all(|v| v.is_nan())
    }

    /// Bitwise equality, treating NaN as equal to NaN.
    pub fn same_as(&self, other: &TeamAggregates) -> bool {
        self.values()
            .iter()
            .zip(other.values())
            .all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()))
    }
}

#[derive(Debug, Clone, Copy)]
struct ChangeEvent {
    end: i64,
    success: bool,
    /// Earliest opened_at among linked incidents.
    first_incident: Option<i64>,
}

#[derive(Debug, Clone, Default)]
struct ProductEvents {
    changes: Vec<ChangeEvent>,
    incidents: Vec<i64>,
    releases: Vec<(i64, bool)>,
    earliest: i64,
}

#[derive(Debug, Clone, Default)]
pub struct TeamIndex {
    cfg: TeamConfig,
    products: HashMap<String, ProductEvents>,
}

impl TeamIndex {
    pub fn build(
        changes: &[ChangeTicket],
        links: &[ChangeIncidentLink],
        incidents: &[IncidentTicket],
        releases: &[ReleaseRecord],
        cfg: TeamConfig,
    ) -> Self {
        let opened: HashMap<&str, i64> = incidents
            .iter()
            .map(|i| (i.id.as_str(), i.opened_at.timestamp()))
            .collect();
        let product_of: HashMap<&str, &str> = changes
            .iter()
            .filter_map(|c| c.it_product.as_deref().map(|p| (c.id.as_str(), p)))
            .collect();

        let mut first_incident: HashMap<&str, i64> = HashMap::new();
        // incident id -> product, each incident counted once
        let mut incident_product: BTreeMap<&str, &str> = BTreeMap::new();
        for link in links {
            let Some(&t) = opened.get(link.incident_id.as_str()) else {
                continue;
            };
            first_incident
                .entry(link.change_id.as_str())
                .and_modify(|v| *v = (*v).min(t))
                .or_insert(t);
            if let Some(p) = product_of.get(link.change_id.as_str()) {
                incident_product.entry(link.incident_id.as_str()).or_insert(p);
            }
        }

        let mut products: HashMap<String, ProductEvents> = HashMap::new();
        for c in changes {
            let Some(p) = c.it_product.as_deref() else {
                continue;
            };
            products.entry(p.to_string()).or_default().changes.push(ChangeEvent {
                end: c.end_time.timestamp(),
                success: c.closure_code.is_successful(),
                first_incident: first_incident.get(c.id.as_str()).copied(),
            });
        }
        for (inc, p) in incident_product {
            products.entry(p.to_string()).or_default().incidents.push(opened[inc]);
        }
        for r in releases {
            products
                .entry(r.it_product.clone())
                .or_default()
                .releases
                .push((r.end_time.timestamp(), r.outcome == ReleaseOutcome::Success));
        }
        for ev in products.values_mut() {
            ev.changes.sort_by_key(|c| (c.end, c.success, c.first_incident));
            ev.incidents.sort_unstable();
            ev.releases.sort_unstable();
            ev.earliest = [
                ev.changes.first().map(|c| c.end),
                ev.incidents.first().copied(),
                ev.releases.first().map(|r| r.0),
            ]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(i64::MAX);
        }
        Self { cfg, products }
    }

    pub fn config(&self) -> TeamConfig {
        self.cfg
    }

    pub fn aggregates(&self, product: Option<&str>, as_of: DateTime<Utc>) -> TeamAggregates {
        let Some(ev) = product.and_then(|p| self.products.get(p)) else {
            return TeamAggregates::MISSING;
        };
        let cutoff = as_of.timestamp();
        if ev.earliest >= cutoff {
            return TeamAggregates::MISSING;
        }
        let weeks = weekly_buckets(as_of, self.cfg.weekly_lookback);
        let months = monthly_buckets(as_of, self.cfg.monthly_lookback);
        TeamAggregates {
            weekly: medians(ev, &weeks, cutoff),
            monthly: medians(ev, &months, cutoff),
        }
    }
}

fn day_start(date: NaiveDate) -> i64 {
    date.and_hms_opt(0, 0, 0).expect("midnight exists").and_utc().timestamp()
}

/// Half-open `[start, end)` second ranges, most recent first.
fn weekly_buckets(as_of: DateTime<Utc>, lookback: u32) -> Vec<(i64, i64)> {
    let date = as_of.date_naive();
    let monday = date - Duration::days(date.weekday().num_days_from_monday() as i64);
    (0..lookback as i64)
        .map(|b| {
            let end = monday - Duration::weeks(b);
            (day_start(end - Duration::weeks(1)), day_start(end))
        })
        .collect()
}

fn monthly_buckets(as_of: DateTime<Utc>, lookback: u32) -> Vec<(i64, i64)> {
    let first = as_of.date_naive().with_day(1).expect("day 1 exists");
    (0..lookback)
        .map(|b| {
            let end = first - Months::new(b);
            (day_start(end - Months::new(1)), day_start(end))
        })
        .collect()
}

fn span<T>(sorted: &[T], key: impl Fn(&T) -> i64, (start, end): (i64, i64)) -> std::ops::Range<usize> {
    let lo = sorted.partition_point(|e| key(e) < start);
    let hi = sorted.partition_point(|e| key(e) < end);
    lo..hi
}

fn medians(ev: &ProductEvents, buckets: &[(i64, i64)], cutoff: i64) -> [f64; 6] {
    let mut series: [Vec<f64>; 6] = Default::default();
    for &bucket in buckets {
        let changes = &ev.changes[span(&ev.changes, |c| c.end, bucket)];
        let n_changes = changes.len();
        let successes = changes.iter().filter(|c| c.success).count();
        let causing = changes
            .iter()
            .filter(|c| c.first_incident.is_some_and(|t| t < cutoff))
            .count();
        let incidents = span(&ev.incidents, |t| *t, bucket).len();
        let releases = &ev.releases[span(&ev.releases, |r| r.0, bucket)];
        let release_ok = releases.iter().filter(|r| r.1).count();

        series[0].push(n_changes as f64);
        if n_changes > 0 {
            series[1].push(100.0 * successes as f64 / n_changes as f64);
        }
        series[2].push(causing as f64);
        series[3].push(incidents as f64);
        if !releases.is_empty() {
            series[4].push(100.0 * release_ok as f64 / releases.len() as f64);
        }
        series[5].push(releases.len() as f64);
    }
    let mut out = [f64::NAN; 6];
    for (slot, values) in out.iter_mut().zip(series.iter_mut()) {
        *slot = median(values);
    }
    out
}

/// Median with the even-length midpoint convention; `NaN` when empty.
pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        (values[mid - 1] + values[mid]) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClosureCode;
    use chrono::TimeZone;

    fn at(y: i32, m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap()
    }

    fn change(id: &str, product: &str, end: DateTime<Utc>) -> ChangeTicket {
        let mut c = ChangeTicket::new(id, end, end, ClosureCode::Successful);
        c.it_product = Some(product.into());
        c
    }

    fn index(changes: &[ChangeTicket], releases: &[ReleaseRecord], lookback_weeks: u32) -> TeamIndex {
        TeamIndex::build(
            changes,
            &[],
            &[],
            releases,
            TeamConfig {
                weekly_lookback: lookback_weeks,
                monthly_lookback: 6,
            },
        )
    }

    #[test]
    fn no_history_is_all_missing() {
        let idx = index(&[], &[], 12);
        assert!(idx.aggregates(Some("PRD-1"), at(2023, 5, 10)).is_all_missing());
        assert!(idx.aggregates(None, at(2023, 5, 10)).is_all_missing());
        // history only after as_of
        let idx = index(&[change("C1", "PRD-1", at(2023, 6, 1))], &[], 12);
        assert!(idx.aggregates(Some("PRD-1"), at(2023, 5, 10)).is_all_missing());
    }

    #[test]
    fn weekly_median_over_two_weeks() {
        // as_of Wednesday 2023-05-17; complete weeks: May 8-14 and May 1-7
        let mut changes = Vec::new();
        for i in 0..4 {
            changes.push(change(&format!("A{i}"), "P", at(2023, 5, 2)));
        }
        for i in 0..6 {
            changes.push(change(&format!("B{i}"), "P", at(2023, 5, 9)));
        }
        let idx = index(&changes, &[], 2);
        let agg = idx.aggregates(Some("P"), at(2023, 5, 17));
        assert_eq!(agg.weekly[0], 5.0);
        assert_eq!(agg.weekly[1], 100.0);
        assert!(agg.weekly[4].is_nan());
        assert_eq!(agg.weekly[5], 0.0);
    }

    #[test]
    fn release_ending_after_as_of_is_excluded() {
        let rel = |id: &str, end: DateTime<Utc>, outcome| ReleaseRecord {
            id: id.into(),
            it_product: "P".into(),
            start_time: end - Duration::hours(1),
            end_time: end,
            outcome,
            po_approved: true,
            peer_reviewed: true,
            related_changes: vec![],
        };
        let releases = vec![
            rel("R1", at(2023, 5, 9), ReleaseOutcome::Success),
            rel("R2", at(2023, 5, 18), ReleaseOutcome::Failure),
        ];
        let idx = index(&[], &releases, 1);
        let agg = idx.aggregates(Some("P"), at(2023, 5, 17));
        assert_eq!(agg.weekly[5], 1.0);
        assert_eq!(agg.weekly[4], 100.0);
    }

    #[test]
    fn median_conventions() {
        assert_eq!(median(&mut [4.0, 6.0]), 5.0);
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert!(median(&mut []).is_nan());
    }

    #[test]
    fn month_buckets_cover_previous_months() {
        let b = monthly_buckets(at(2023, 3, 15), 2);
        assert_eq!(b[0].0, Utc.with_ymd_and_hms(2023, 2, 1, 0, 0, 0).unwrap().timestamp());
        assert_eq!(b[0].1, Utc.with_ymd_and_hms(2023, 3, 1, 0, 0, 0).unwrap().timestamp());
        assert_eq!(b[1].0, Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap().timestamp());
    }
}
