//! Priority-weighted binary evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::PriorityWeights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub beta: f64,
    pub priority_weights: PriorityWeights,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            beta: 2.0,
            priority_weights: PriorityWeights::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive".into()));
        }
        self.priority_weights.validate()
    }
}

/// Weighted counts from the positive class's point of view. The negative
/// class's table is the mirror image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedConfusion {
    pub tp: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    pub tn: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
}

impl ClassCounts {
    /// Weighted mass of true members of the class.
    pub fn n(&self) -> f64 {
        self.tp + self.fn_
    }
}

impl WeightedConfusion {
    pub fn class(&self, c: Class) -> ClassCounts {
        match c {
            Class::Positive => ClassCounts {
                tp: self.tp,
                fp: self.fp,
                fn_: self.fn_,
                tn: self.tn,
            },
            Class::Negative => ClassCounts {
                tp: self.tn,
                fp: self.fn_,
                fn_: self.fp,
                tn: self.tp,
            },
        }
    }

    pub fn n_positive(&self) -> f64 {
        self.tp + self.fn_
    }

    pub fn n_negative(&self) -> f64 {
        self.tn + self.fp
    }

    pub fn total(&self) -> f64 {
        self.n_positive() + self.n_negative()
    }

    /// A class is empty or has no predicted members, so some per-class ratio
    /// hit 0/0.
    pub fn is_degenerate(&self) -> bool {
        [Class::Positive, Class::Negative].iter().any(|&c| {
            let k = self.class(c);
            k.n() == 0.0 || k.tp + k.fp == 0.0
        })
    }
}

fn check_lengths(scores: usize, labels: usize, weights: usize) -> Result<()> {
    if scores == labels && labels == weights {
        Ok(())
    } else {
        Err(Error::LengthMismatch(format!(
            "{scores} scores, {labels} labels, {weights} weights"
        )))
    }
}

/// Predicted positive iff `score >= threshold`.
pub fn confusion(scores: &[u8], labels: &[u8], weights: &[f64], threshold: u32) -> Result<WeightedConfusion> {
    check_lengths(scores.len(), labels.len(), weights.len())?;
    let mut c = WeightedConfusion::default();
    for ((s, y), w) in scores.iter().zip(labels).zip(weights) {
        let predicted = u32::from(*s) >= threshold;
        match (*y == 1, predicted) {
            (true, true) => c.tp += w,
            (true, false) => c.fn_ += w,
            (false, true) => c.fp += w,
            (false, false) => c.tn += w,
        }
    }
    Ok(c)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Mass-weighted mean of per-class recall.
pub fn weighted_recall(c: &WeightedConfusion) -> Result<f64> {
    let n = c.total();
    if !(n > 0.0) {
        return Err(Error::EmptyEvaluation);
    }
    Ok([Class::Positive, Class::Negative]
        .iter()
        .map(|&k| c.class(k))
        .filter(|k| k.n() > 0.0)
        .map(|k| k.n() / n * (k.tp / (k.tp + k.fn_)))
        .sum())
}

/// Mass-weighted mean of per-class F-beta. A 0/0 term contributes 0.
pub fn weighted_fbeta(c: &WeightedConfusion, beta: f64) -> Result<f64> {
    let terms: Vec<ClassRates> = [Class::Positive, Class::Negative]
        .iter()
        .map(|&k| c.class(k))
        .filter(|k| k.n() > 0.0)
        .map(|k| ClassRates {
            mass: k.n(),
            precision: ratio(k.tp, k.tp + k.fp),
            recall: ratio(k.tp, k.tp + k.fn_),
        })
        .collect();
    fbeta_from_rates(&terms, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRates {
    pub mass: f64,
    pub precision: f64,
    pub recall: f64,
}

/// `Σ_c (n_c / N) · F_β(P_c, R_c)` over the given classes.
pub fn fbeta_from_rates(classes: &[ClassRates], beta: f64) -> Result<f64> {
    let n: f64 = classes.iter().map(|c| c.mass).sum();
    if !(n > 0.0) {
        return Err(Error::EmptyEvaluation);
    }
    let b2 = beta * beta;
    Ok(classes
        .iter()
        .map(|c| c.mass / n * ratio((1.0 + b2) * c.precision * c.recall, b2 * c.precision + c.recall))
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub value: f64,
    /// No predicted positives.
    pub degenerate: bool,
}

pub fn precision(c: &WeightedConfusion) -> Precision {
    let predicted = c.tp + c.fp;
    Precision {
        value: ratio(c.tp, predicted),
        degenerate: predicted == 0.0,
    }
}

/// Weighted probability that a positive outranks a negative, ties half.
/// `None` when either class is absent.
pub fn auc<S: Copy + PartialOrd>(scores: &[S], labels: &[u8], weights: &[f64]) -> Result<Option<f64>> {
    check_lengths(scores.len(), labels.len(), weights.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
    let (mut neg_below, mut pairs, mut pos_total) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0.0, 0.0);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            let r = order[j];
            if labels[r] == 1 {
                pos += weights[r];
            } else {
                neg += weights[r];
            }
            j += 1;
        }
        pairs += pos * neg_below + 0.5 * pos * neg;
        neg_below += neg;
        pos_total += pos;
        i = j;
    }
    let den = pos_total * neg_below;
    Ok(if den > 0.0 { Some(pairs / den) } else { None })
}

pub fn default_grid() -> Vec<u32> {
    (0..=100).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub best_threshold: u32,
    pub best_wfbeta: f64,
    /// (threshold, wFβ) for every grid value, ascending.
    pub curve: Vec<(u32, f64)>,
}

/// Grid threshold maximizing wFβ; the smallest wins ties.
pub fn threshold_search(scores: &[u8], labels: &[u8], weights: &[f64], beta: f64, grid: &[u32]) -> Result<ThresholdSearch> {
    check_lengths(scores.len(), labels.len(), weights.len())?;
    if scores.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("threshold grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let mut curve = Vec::with_capacity(grid.len());
    let mut best: Option<(u32, f64)> = None;
    for t in grid {
        let f = weighted_fbeta(&confusion(scores, labels, weights, t)?, beta)?;
        curve.push((t, f));
        if best.map_or(true, |(_, b)| f > b) {
            best = Some((t, f));
        }
    }
    let (best_threshold, best_wfbeta) = best.expect("grid is non-empty");
    Ok(ThresholdSearch {
        best_threshold,
        best_wfbeta,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<String>,
    pub threshold: u32,
    pub beta: f64,
    pub precision: f64,
    pub weighted_recall: f64,
    pub weighted_fbeta: f64,
    /// Pair-weighted by sample weight.
    pub auc: Option<f64>,
    pub auc_unweighted: Option<f64>,
    pub confusion: WeightedConfusion,
    pub evaluated_rows: usize,
    pub excluded_rows: usize,
    pub degenerate: bool,
}

impl EvalReport {
    pub fn evaluate(scores: &[u8], labels: &[u8], weights: &[f64], threshold: u32, beta: f64) -> Result<Self> {
        let conf = confusion(scores, labels, weights, threshold)?;
        if scores.is_empty() {
            return Ok(Self::empty(threshold, beta));
        }
        let p = precision(&conf);
        Ok(Self {
            window: None,
            threshold,
            beta,
            precision: p.value,
            weighted_recall: weighted_recall(&conf)?,
            weighted_fbeta: weighted_fbeta(&conf, beta)?,
            auc: auc(scores, labels, weights)?,
            auc_unweighted: auc(scores, labels, &vec![1.0; scores.len()])?,
            confusion: conf,
            evaluated_rows: scores.len(),
            excluded_rows: 0,
            degenerate: conf.is_degenerate() || p.degenerate,
        })
    }

    /// Report for a slice with no rows; metrics are zero and flagged.
    pub fn empty(threshold: u32, beta: f64) -> Self {
        Self {
            window: None,
            threshold,
            beta,
            precision: 0.0,
            weighted_recall: 0.0,
            weighted_fbeta: 0.0,
            auc: None,
            auc_unweighted: None,
            confusion: WeightedConfusion::default(),
            evaluated_rows: 0,
            excluded_rows: 0,
            degenerate: true,
        }
    }

    pub fn with_window(mut self, window: impl Into<String>) -> Self {
        self.window = Some(window.into());
        self
    }
}

fn fbeta_label(beta: f64) -> String {
    if beta.fract() == 0.0 {
        format!("wF{}", beta as i64)
    } else {
        format!("wF{beta}")
    }
}

/// Plain-text comparison table: one column per report.
pub fn render_table(columns: &[(&str, &EvalReport)]) -> String {
    let beta = columns.first().map_or(2.0, |(_, r)| r.beta);
    let labels = ["Threshold".to_string(), "Precision".into(), "wR".into(), fbeta_label(beta), "AUC".into()];
    let cell = |r: &EvalReport, row: usize| -> String {
        match row {
            0 => r.threshold.to_string(),
            1 => format!("{:.2}", r.precision),
            2 => format!("{:.2}", r.weighted_recall),
            3 => format!("{:.2}", r.weighted_fbeta),
            _ => r.auc.map_or("n/a".into(), |a| format!("{a:.2}")),
        }
    };
    let label_width = labels.iter().map(String::len).max().unwrap_or(0);
    let widths: Vec<usize> = columns.iter().map(|(name, _)| name.len().max(9)).collect();
    let mut out = format!("{:<label_width$}", "");
    for ((name, _), w) in columns.iter().zip(&widths) {
        out.push_str(&format!(" | {name:>w$}"));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width));
    for w in &widths {
        out.push_str(&format!("-+-{}", "-".repeat(*w)));
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        out.push_str(&format!("{label:<label_width$}"));
        for ((_, r), w) in columns.iter().zip(&widths) {
            out.push_str(&format!(" | {:>w$}", cell(r, i)));
        }
        out.push('\n');
    }
    out
}
