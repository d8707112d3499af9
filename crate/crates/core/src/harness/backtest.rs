//! Sliding-window replay: for every window, refit on everything before it,
//! re-pick the threshold on the trailing validation months, then score the
//! window against realized labels.

use chrono::{DateTime, Duration, Months, Utc};
use serde::{Deserialize, Serialize};
use tracing::{debug, error};

use crate::error::{Error, Result};
use crate::evalkit::EvalReport;
use crate::featurize::FeatureConfig;

use super::pipeline::{build_rows, fit_model, score_rows, select_threshold, PipelineConfig, Prepared};
use super::split::DateRange;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    pub window_days: u32,
    /// Trailing months before each window used to pick its threshold.
    pub validation_months: u32,
    /// Windows in the default plan, which ends the day after the last change.
    pub windows: u32,
    /// Train on labels known at the window start rather than final labels.
    pub as_of_labels: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window_days: 7,
            validation_months: 2,
            windows: 13,
            as_of_labels: true,
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_days == 0 || self.validation_months == 0 || self.windows == 0 {
            return Err(Error::Config("backtest window_days, validation_months and windows must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub stream: DateRange,
    pub windows: Vec<DateRange>,
}

impl WindowPlan {
    /// Tiles `stream` with windows of `window_days`; the last one may be short.
    pub fn new(stream: DateRange, window_days: u32) -> Result<Self> {
        if stream.end <= stream.start || window_days == 0 {
            return Err(Error::Config("backtest stream must be non-empty with positive window length".into()));
        }
        let step = Duration::days(i64::from(window_days));
        let mut windows = Vec::new();
        let mut s = stream.start;
        while s < stream.end {
            let e = (s + step).min(stream.end);
            windows.push(DateRange { start: s, end: e });
            s = e;
        }
        Ok(Self { stream, windows })
    }

    /// The last `cfg.windows` windows ending at midnight after the latest change.
    pub fn trailing(prep: &Prepared, cfg: &BacktestConfig) -> Result<Self> {
        let last = prep
            .corpus
            .changes
            .iter()
            .map(|c| c.start_time)
            .max()
            .ok_or_else(|| Error::InvalidInput("empty corpus".into()))?;
        let end = last.date_naive().succ_opt().expect("date in range").and_hms_opt(0, 0, 0).expect("midnight").and_utc();
        let start = end - Duration::days(i64::from(cfg.window_days) * i64::from(cfg.windows));
        Self::new(DateRange { start, end }, cfg.window_days)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub window: DateRange,
    /// Training data is restricted to changes starting before this instant.
    pub train_cutoff: DateTime<Utc>,
    pub threshold: u32,
    pub selection_train_rows: usize,
    pub validation_rows: usize,
    pub train_rows: usize,
    pub model_version: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSpread {
    pub mean: f64,
    /// Sample standard deviation; zero with fewer than two values.
    pub std: f64,
    pub n: usize,
}

impl MetricSpread {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub precision: MetricSpread,
    pub weighted_recall: MetricSpread,
    pub weighted_fbeta: MetricSpread,
    pub auc: MetricSpread,
    pub threshold: MetricSpread,
    /// Windows with no rows; left out of the spreads above.
    pub empty_windows: usize,
}

impl StabilitySummary {
    pub fn from_windows(windows: &[WindowResult]) -> Self {
        let live: Vec<&WindowResult> = windows.iter().filter(|w| w.report.evaluated_rows > 0).collect();
        let pick = |f: &dyn Fn(&WindowResult) -> Option<f64>| -> Vec<f64> { live.iter().filter_map(|w| f(w)).collect() };
        Self {
            precision: MetricSpread::of(&pick(&|w| Some(w.report.precision))),
            weighted_recall: MetricSpread::of(&pick(&|w| Some(w.report.weighted_recall))),
            weighted_fbeta: MetricSpread::of(&pick(&|w| Some(w.report.weighted_fbeta))),
            auc: MetricSpread::of(&pick(&|w| w.report.auc)),
            threshold: MetricSpread::of(&pick(&|w| Some(f64::from(w.threshold)))),
            empty_windows: windows.len() - live.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestRun {
    pub plan: WindowPlan,
    pub windows: Vec<WindowResult>,
    pub summary: StabilitySummary,
    pub leakage_violations: usize,
}

pub fn sliding_window_run(
    prep: &Prepared,
    plan: &WindowPlan,
    features: &FeatureConfig,
    cfg: &PipelineConfig,
) -> Result<BacktestRun> {
    let bt = &cfg.backtest;
    bt.validate()?;
    let final_labels = &prep.linkage.labels;
    let changes = &prep.corpus.changes;
    let mut leakage_violations = 0;
    let mut windows = Vec::with_capacity(plan.windows.len());
    for w in &plan.windows {
        let cutoff = w.start;
        let val_start = cutoff - Months::new(bt.validation_months);
        let train_labels = if bt.as_of_labels {
            prep.labels_as_of(cutoff, cfg)
        } else {
            final_labels.clone()
        };
        let before = |end: DateTime<Utc>| -> Vec<usize> { (0..changes.len()).filter(|&i| changes[i].start_time < end).collect() };
        let selection_rows = before(val_start);
        let validation_rows = prep.rows_in(&DateRange { start: val_start, end: cutoff });
        let train_rows = before(cutoff);

        let selector = fit_model(prep, &selection_rows, &train_labels, features, cfg)?;
        let validation = build_rows(prep, &selector.schema, &validation_rows, &train_labels);
        if validation.labels.is_empty() {
            return Err(Error::InvalidInput(format!("no validation rows before window {}", w.label())));
        }
        let threshold = select_threshold(&selector, &validation, cfg.metric.beta)?.best_threshold;

        let fitted = fit_model(prep, &train_rows, &train_labels, features, cfg)?;
        let leaked = train_rows.iter().filter(|&&i| changes[i].start_time >= cutoff).count()
            + usize::from(fitted.model.training_range.is_some_and(|r| r.end >= cutoff));
        if leaked > 0 {
            error!(window = %w.label(), leaked, "training data reaches into the scored window");
            leakage_violations += leaked;
        }

        let scored = build_rows(prep, &fitted.schema, &prep.rows_in(w), final_labels);
        let mut report = if scored.labels.is_empty() {
            EvalReport::empty(threshold, cfg.metric.beta)
        } else {
            let scores = score_rows(&fitted, &scored)?;
            EvalReport::evaluate(&scores, &scored.labels, &scored.weights, threshold, cfg.metric.beta)?
        };
        report.excluded_rows = scored.excluded;
        debug!(window = %w.label(), threshold, rows = report.evaluated_rows, "window scored");
        windows.push(WindowResult {
            window: *w,
            train_cutoff: cutoff,
            threshold,
            selection_train_rows: selector.train_rows,
            validation_rows: validation.labels.len(),
            train_rows: fitted.train_rows,
            model_version: fitted.model.model_version.clone(),
            report: report.with_window(w.label()),
        });
    }
    Ok(BacktestRun {
        plan: plan.clone(),
        summary: StabilitySummary::from_windows(&windows),
        windows,
        leakage_violations,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    window_start: String,
    window_end: String,
    threshold: u32,
    rows: usize,
    precision: f64,
    weighted_recall: f64,
    weighted_fbeta: f64,
    auc: Option<f64>,
    degenerate: bool,
    model_version: &'a str,
}

pub fn windows_csv(run: &BacktestRun) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &run.windows {
        w.serialize(CsvRow {
            window_start: r.window.start.format("%Y-%m-%d").to_string(),
            window_end: r.window.end.format("%Y-%m-%d").to_string(),
            threshold: r.threshold,
            rows: r.report.evaluated_rows,
            precision: r.report.precision,
            weighted_recall: r.report.weighted_recall,
            weighted_fbeta: r.report.weighted_fbeta,
            auc: r.report.auc,
            degenerate: r.report.degenerate,
            model_version: &r.model_version,
        })
        .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Line chart of per-window wR, wFβ and AUC on a fixed 0..1 axis.
pub fn windows_svg(run: &BacktestRun) -> String {
    const W: f64 = 720.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    let n = run.windows.len().max(2);
    let x = |i: usize| PAD + (W - 2.0 * PAD) * i as f64 / (n - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * v.clamp(0.0, 1.0);
    let series: [(&str, &str, Box<dyn Fn(&WindowResult) -> Option<f64>>); 3] = [
        ("wR", "#1f77b4", Box::new(|w| Some(w.report.weighted_recall))),
        ("wF", "#d62728", Box::new(|w| Some(w.report.weighted_fbeta))),
        ("AUC", "#2ca02c", Box::new(|w| w.report.auc)),
    ];
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        out.push_str(&format!(
            "<line x1=\"{PAD}\" x2=\"{}\" y1=\"{y0:.1}\" y2=\"{y0:.1}\" stroke=\"#ddd\"/><text x=\"4\" y=\"{:.1}\" font-size=\"10\">{tick:.2}</text>\n",
            W - PAD,
            y(tick) + 3.0,
            y0 = y(tick),
        ));
    }
    for (k, (name, colour, f)) in series.iter().enumerate() {
        let points: Vec<String> = run
            .windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.report.evaluated_rows > 0)
            .filter_map(|(i, w)| f(w).map(|v| format!("{:.1},{:.1}", x(i), y(v))))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"14\" font-size=\"12\" fill=\"{colour}\">{name}</text>\n",
            points.join(" "),
            PAD + 60.0 * k as f64
        ));
    }
    for (i, w) in run.windows.iter().enumerate() {
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\" text-anchor=\"middle\">{}</text>\n",
            x(i),
            H - PAD + 14.0,
            w.window.start.format("%m-%d")
        ));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn ninety_one_days_make_thirteen_weeks() {
        let start = Utc.with_ymd_and_hms(2023, 10, 2, 0, 0, 0).unwrap();
        let plan = WindowPlan::new(DateRange { start, end: start + Duration::days(91) }, 7).unwrap();
        assert_eq!(plan.windows.len(), 13);
        assert!(plan.windows.windows(2).all(|p| p[0].end == p[1].start));
    }

    #[test]
    fn partial_last_window() {
        let start = Utc.with_ymd_and_hms(2023, 10, 1, 0, 0, 0).unwrap();
        let plan = WindowPlan::new(DateRange { start, end: start + Duration::days(92) }, 7).unwrap();
        assert_eq!(plan.windows.len(), 14);
        assert_eq!(plan.windows[13].end - plan.windows[13].start, Duration::days(1));
    }

    #[test]
    fn spread_matches_hand_values() {
        let s = MetricSpread::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(MetricSpread::of(&[4.0]).std, 0.0);
    }
}
