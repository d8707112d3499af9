use chrono::{DateTime, Datelike, Timelike, Utc};
use serde::{Deserialize, Serialize};

/// Calendar features of a change start. ISO week numbering; weekday 1 = Monday.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateFeatures {
    pub hour: u32,
    pub day_of_week: u32,
    pub quarter: u32,
    pub month: u32,
    pub day_of_year: u32,
    pub day_of_month: u32,
    pub week_of_year: u32,
    pub is_weekend: bool,
}

pub const DATE_FEATURE_NAMES: [&str; 8] = [
    "start_hour",
    "start_day_of_week",
    "start_quarter",
    "start_month",
    "start_day_of_year",
    "start_day_of_month",
    "start_week_of_year",
    "start_is_weekend",
];

pub fn date_features(start: &DateTime<Utc>) -> DateFeatures {
    let day_of_week = start.weekday().number_from_monday();
    DateFeatures {
        hour: start.hour(),
        day_of_week,
        quarter: (start.month() - 1) / 3 + 1,
        month: start.month(),
        day_of_year: start.ordinal(),
        day_of_month: start.day(),
        week_of_year: start.iso_week().week(),
        is_weekend: day_of_week >= 6,
    }
}

impl DateFeatures {
    pub fn as_values(&self) -> [f64; 8] {
        [
            self.hour as f64,
            self.day_of_week as f64,
            self.quarter as f64,
            self.month as f64,
            self.day_of_year as f64,
            self.day_of_month as f64,
            self.week_of_year as f64,
            if self.is_weekend { 1.0 } else { 0.0 },
        ]
    }
}
