//! Calendar-month temporal partitioning on change start time.

use chrono::{DateTime, Datelike, Months, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::ChangeTicket;
use crate::error::{Error, Result};

/// Half-open `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
}

impl DateRange {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        t >= self.start && t < self.end
    }

    pub fn label(&self) -> String {
        format!("{}..{}", self.start.format("%Y-%m-%d"), self.end.format("%Y-%m-%d"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_months: u32,
    pub validation_months: u32,
    pub test_months: u32,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_months: 8,
            validation_months: 2,
            test_months: 2,
        }
    }
}

impl SplitConfig {
    pub fn total_months(&self) -> u32 {
        self.train_months + self.validation_months + self.test_months
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSplit {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
    /// Indices into the input slice, in input order.
    pub train_rows: Vec<usize>,
    pub validation_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

pub fn month_floor(t: DateTime<Utc>) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(t.year(), t.month(), 1, 0, 0, 0)
        .single()
        .expect("first of month exists")
}

/// Splits on the calendar months counted from the month of the earliest
/// change. A change starting exactly on a boundary goes to the later slice;
/// changes past the last boundary stay in the test slice.
pub fn temporal_split(changes: &[ChangeTicket], cfg: &SplitConfig) -> Result<TemporalSplit> {
    let (Some(first), Some(last)) = (
        changes.iter().map(|c| c.start_time).min(),
        changes.iter().map(|c| c.start_time).max(),
    ) else {
        return Err(Error::InvalidInput("cannot split an empty corpus".into()));
    };
    if cfg.train_months == 0 || cfg.validation_months == 0 || cfg.test_months == 0 {
        return Err(Error::Config("every split slice needs at least one month".into()));
    }
    let origin = month_floor(first);
    let total = cfg.total_months();
    // The data must reach into the final month of the requested span.
    let last_month_start = origin + Months::new(total - 1);
    if last < last_month_start {
        let months = (last.year() - origin.year()) * 12 + last.month() as i32 - origin.month() as i32 + 1;
        return Err(Error::SpanTooShort {
            available: format!("{months} months"),
            required: format!("{total} months"),
        });
    }
    let b1 = origin + Months::new(cfg.train_months);
    let b2 = b1 + Months::new(cfg.validation_months);
    let end = (origin + Months::new(total)).max(last + chrono::Duration::seconds(1));
    let train = DateRange { start: origin, end: b1 };
    let validation = DateRange { start: b1, end: b2 };
    let test = DateRange { start: b2, end };

    let mut out = TemporalSplit {
        train,
        validation,
        test,
        train_rows: Vec::new(),
        validation_rows: Vec::new(),
        test_rows: Vec::new(),
    };
    for (i, c) in changes.iter().enumerate() {
        if c.start_time < b1 {
            out.train_rows.push(i);
        } else if c.start_time < b2 {
            out.validation_rows.push(i);
        } else {
            out.test_rows.push(i);
        }
    }
    Ok(out)
}
