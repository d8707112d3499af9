//! Weighted-factor rule scoring with low/medium/high bands.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ChangeTicket;
use crate::error::{Error, Result};

pub const EXAMPLE_RULES: &str = include_str!("../config/rules.example.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskBand {
    Low,
    Medium,
    High,
}

impl RiskBand {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskBand::Low => "low",
            RiskBand::Medium => "medium",
            RiskBand::High => "high",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BandCutoffs {
    /// Highest score still in the low band.
    pub low_max: u8,
    /// Highest score still in the medium band.
    pub medium_max: u8,
}

impl Default for BandCutoffs {
    fn default() -> Self {
        Self {
            low_max: 33,
            medium_max: 59,
        }
    }
}

impl BandCutoffs {
    pub fn validate(&self) -> Result<()> {
        if self.low_max < self.medium_max && self.medium_max < 100 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "band cutoffs must satisfy low_max < medium_max < 100, got {} and {}",
                self.low_max, self.medium_max
            )))
        }
    }
}

pub fn risk_band(score: i64, cutoffs: &BandCutoffs) -> Result<RiskBand> {
    if !(0..=100).contains(&score) {
        return Err(Error::ScoreOutOfRange(score));
    }
    Ok(if score <= i64::from(cutoffs.low_max) {
        RiskBand::Low
    } else if score <= i64::from(cutoffs.medium_max) {
        RiskBand::Medium
    } else {
        RiskBand::High
    })
}

/// Half-open numeric interval `[min, max)`; open ends are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangePoints {
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
    pub points: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    /// Change field, or a key of `baseline_inputs`.
    pub field: String,
    pub weight: f64,
    /// Points when the field is absent.
    #[serde(default)]
    pub missing: Option<u8>,
    /// Points for a present value matched by neither `values` nor `ranges`.
    #[serde(default)]
    pub default: Option<u8>,
    #[serde(default)]
    pub values: BTreeMap<String, u8>,
    #[serde(default)]
    pub ranges: Vec<RangePoints>,
}

impl Factor {
    pub fn points(&self, value: Option<&str>) -> Result<u8> {
        let unmapped = |v: &str| Error::UnmappedValue {
            factor: self.name.clone(),
            value: v.to_string(),
        };
        let Some(v) = value else {
            return self.missing.or(self.default).ok_or_else(|| unmapped("<missing>"));
        };
        if let Some(p) = self.values.get(v) {
            return Ok(*p);
        }
        if let Ok(x) = v.trim().parse::<f64>() {
            let hit = self
                .ranges
                .iter()
                .find(|r| r.min.map_or(true, |m| x >= m) && r.max.map_or(true, |m| x < m));
            if let Some(r) = hit {
                return Ok(r.points);
            }
        }
        self.default.ok_or_else(|| unmapped(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    #[serde(default = "default_threshold")]
    pub threshold: u8,
    #[serde(default)]
    pub bands: BandCutoffs,
    pub factors: Vec<Factor>,
}

fn default_threshold() -> u8 {
    60
}

impl RuleConfig {
    pub fn example() -> Self {
        Self::from_toml(EXAMPLE_RULES).expect("bundled rule config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("rule config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.bands.validate()?;
        if self.threshold > 100 {
            return Err(Error::Config("threshold must be within 0..=100".into()));
        }
        if self.factors.is_empty() {
            return Err(Error::Config("rule config needs at least one factor".into()));
        }
        let mut total = 0.0;
        for f in &self.factors {
            if !(f.weight >= 0.0 && f.weight.is_finite()) {
                return Err(Error::Config(format!("factor {}: weight must be finite and >= 0", f.name)));
            }
            let points = f.values.values().chain(f.ranges.iter().map(|r| &r.points)).chain(&f.missing).chain(&f.default);
            if points.into_iter().any(|p| *p > 100) {
                return Err(Error::Config(format!("factor {}: points must be within 0..=100", f.name)));
            }
            total += f.weight;
        }
        if !(total > 0.0) {
            return Err(Error::Config("factor weights must sum to a positive number".into()));
        }
        Ok(())
    }

    pub fn score(&self, change: &ChangeTicket) -> Result<u8> {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for f in &self.factors {
            let p = f.points(change.field_value(&f.field).as_deref())?;
            weighted += f.weight * f64::from(p);
            total += f.weight;
        }
        Ok(round_half_up(weighted / total))
    }

    pub fn band(&self, score: u8) -> RiskBand {
        risk_band(i64::from(score), &self.bands).expect("u8 scores from the engine are in range")
    }

    pub fn classify(&self, score: u8) -> bool {
        score >= self.threshold
    }

    /// Present values no factor maps, with occurrence counts.
    pub fn unmapped_values(&self, changes: &[ChangeTicket]) -> Vec<UnmappedValue> {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for c in changes {
            for f in &self.factors {
                let v = c.field_value(&f.field);
                if f.points(v.as_deref()).is_err() {
                    let shown = v.unwrap_or_else(|| "<missing>".into());
                    *counts.entry((f.name.clone(), shown)).or_default() += 1;
                }
            }
        }
        counts
            .into_iter()
            .map(|((factor, value), count)| UnmappedValue { factor, value, count })
            .collect()
    }
}

/// Tolerant half-up rounding so weight rescaling cannot flip a tie.
fn round_half_up(x: f64) -> u8 {
    (x + 0.5 + 1e-9).floor().clamp(0.0, 100.0) as u8
}

pub fn rule_score(change: &ChangeTicket, config: &RuleConfig) -> Result<u8> {
    config.score(change)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnmappedValue {
    pub factor: String,
    pub value: String,
    pub count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ClosureCode;
    use chrono::{TimeZone, Utc};

    fn change() -> ChangeTicket {
        let t = Utc.with_ymd_and_hms(2023, 1, 2, 0, 0, 0).unwrap();
        ChangeTicket::new("CHG1", t, t, ClosureCode::Successful)
    }

    fn factor(name: &str, field: &str, weight: f64, missing: u8) -> Factor {
        Factor {
            name: name.into(),
            field: field.into(),
            weight,
            missing: Some(missing),
            default: None,
            values: BTreeMap::new(),
            ranges: Vec::new(),
        }
    }

    fn config(factors: Vec<Factor>) -> RuleConfig {
        RuleConfig {
            threshold: 60,
            bands: BandCutoffs::default(),
            factors,
        }
    }

    #[test]
    fn bands_follow_cutoffs() {
        let c = BandCutoffs::default();
        assert_eq!(risk_band(33, &c).unwrap(), RiskBand::Low);
        assert_eq!(risk_band(34, &c).unwrap(), RiskBand::Medium);
        assert_eq!(risk_band(45, &c).unwrap(), RiskBand::Medium);
        assert_eq!(risk_band(59, &c).unwrap(), RiskBand::Medium);
        assert_eq!(risk_band(60, &c).unwrap(), RiskBand::High);
        assert_eq!(risk_band(100, &c).unwrap(), RiskBand::High);
        assert!(matches!(risk_band(101, &c), Err(Error::ScoreOutOfRange(101))));
        assert!(matches!(risk_band(-1, &c), Err(Error::ScoreOutOfRange(-1))));
    }

    #[test]
    fn all_zero_points_score_zero() {
        let cfg = config(vec![factor("a", "ci_name", 1.0, 0), factor("b", "sox_critical", 2.0, 0)]);
        let s = cfg.score(&change()).unwrap();
        assert_eq!(s, 0);
        assert_eq!(cfg.band(s), RiskBand::Low);
    }

    #[test]
    fn score_is_weighted_average() {
        let mut sox = factor("sox", "sox_critical", 1.0, 0);
        sox.values.insert("true".into(), 90);
        let cfg = config(vec![sox, factor("b", "ci_name", 2.0, 45)]);
        let mut c = change();
        c.sox_critical = Some(true);
        // (90 + 2 * 45) / 3 = 60
        let s = cfg.score(&c).unwrap();
        assert_eq!(s, 60);
        assert_eq!(cfg.band(s), RiskBand::High);
        assert!(cfg.classify(s));
    }

    #[test]
    fn ranges_are_half_open() {
        let mut f = factor("svc", "impacted_services", 1.0, 0);
        f.ranges = vec![
            RangePoints {
                min: None,
                max: Some(2.0),
                points: 10,
            },
            RangePoints {
                min: Some(2.0),
                max: None,
                points: 70,
            },
        ];
        assert_eq!(f.points(Some("1")).unwrap(), 10);
        assert_eq!(f.points(Some("2")).unwrap(), 70);
    }

    #[test]
    fn unmapped_value_names_factor() {
        let mut f = factor("cat", "change_category", 1.0, 0);
        f.values.insert("normal".into(), 40);
        let cfg = config(vec![f]);
        let mut c = change();
        c.change_category = Some("weird".into());
        match cfg.score(&c) {
            Err(Error::UnmappedValue { factor, value }) => {
                assert_eq!(factor, "cat");
                assert_eq!(value, "weird");
            }
            other => panic!("expected unmapped error, got {other:?}"),
        }
        let report = cfg.unmapped_values(&[c]);
        assert_eq!(report.len(), 1);
        assert_eq!(report[0].count, 1);
    }

    #[test]
    fn example_config_parses_and_scores_blank_change() {
        let cfg = RuleConfig::example();
        assert_eq!(cfg.threshold, 60);
        assert!(cfg.score(&change()).is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = config(vec![factor("a", "ci_name", 0.0, 0)]);
        assert!(cfg.validate().is_err());
        cfg.factors[0].weight = 1.0;
        cfg.bands = BandCutoffs {
            low_max: 50,
            medium_max: 40,
        };
        assert!(cfg.validate().is_err());
    }
}
