//! Histogram gradient-boosted trees for binary classification.

pub mod binning;
mod grow;
pub mod model;
pub mod tree;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{FeatureKind, FeatureMatrix};

pub use model::{
    logit_clamped, margin_to_score, probability_to_score, sigmoid, Forest, TrainedModel, TrainingRange, LOG_ODDS_CLAMP,
};
pub use tree::{Node, SplitRule, Tree};

const MAX_STEP_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub max_leaves: usize,
    /// Minimum sample-weight mass per child, after weights are rescaled to mean 1.
    pub min_weighted_samples_per_leaf: f64,
    pub n_bins: usize,
    pub l2_leaf_regularization: f64,
    pub max_categories_per_split: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_trees: 500,
            learning_rate: 0.05,
            max_depth: 6,
            max_leaves: 8,
            min_weighted_samples_per_leaf: 100.0,
            n_bins: 255,
            l2_leaf_regularization: 1.0,
            max_categories_per_split: 32,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("hyperparams: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.n_bins < 2 || self.n_bins > u16::MAX as usize - 1 {
            return bad("n_bins must be in 2..65534");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if self.max_leaves < 2 {
            return bad("max_leaves must be at least 2");
        }
        if !(self.l2_leaf_regularization >= 0.0) || !(self.min_weighted_samples_per_leaf >= 0.0) {
            return bad("l2_leaf_regularization and min_weighted_samples_per_leaf must be non-negative");
        }
        if self.max_categories_per_split == 0 {
            return bad("max_categories_per_split must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub forest: Forest,
    /// Weighted mean log-loss before the first tree and after each accepted tree.
    pub loss_history: Vec<f64>,
    /// Single-class labels: zero trees and a clamped base score.
    pub degenerate: bool,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn weighted_log_loss(margins: &[f64], labels: &[u8], weights: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut mass = 0.0;
    for ((m, y), w) in margins.iter().zip(labels).zip(weights) {
        total += w * if *y == 1 { softplus(-m) } else { softplus(*m) };
        mass += w;
    }
    total / mass
}

/// Row order used for training so the result does not depend on input order.
fn canonical_order(columns: &[Vec<f64>], labels: &[u8], weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| {
        for col in columns {
            let o = col[a].total_cmp(&col[b]);
            if o != Ordering::Equal {
                return o;
            }
        }
        labels[a].cmp(&labels[b]).then(weights[a].total_cmp(&weights[b]))
    });
    order
}

pub fn fit(matrix: &FeatureMatrix, labels: &[u8], weights: &[f64], hp: &Hyperparams) -> Result<FitOutcome> {
    fit_columns(&matrix.values, &matrix.kinds(), &matrix.names(), labels, weights, hp)
}

/// Fits on column-major data. NaN marks a missing cell.
pub fn fit_columns(
    columns: &[Vec<f64>],
    kinds: &[FeatureKind],
    names: &[String],
    labels: &[u8],
    weights: &[f64],
    hp: &Hyperparams,
) -> Result<FitOutcome> {
    hp.validate()?;
    let n = labels.len();
    if weights.len() != n || columns.iter().any(|c| c.len() != n) {
        return Err(Error::LengthMismatch(format!(
            "{n} labels, {} weights, column lengths {:?}",
            weights.len(),
            columns.iter().map(Vec::len).collect::<std::collections::BTreeSet<_>>()
        )));
    }
    if kinds.len() != columns.len() || names.len() != columns.len() {
        return Err(Error::LengthMismatch("feature kinds/names differ from column count".into()));
    }
    if labels.iter().any(|y| *y > 1) {
        return Err(Error::InvalidInput("labels must be 0 or 1".into()));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidInput("sample weights must be finite and non-negative".into()));
    }
    let weight_sum: f64 = weights.iter().sum();
    if !(weight_sum > 0.0) {
        return Err(Error::ZeroWeightSum);
    }

    let order = canonical_order(columns, labels, weights);
    let mean_weight = weight_sum / n as f64;
    let y: Vec<u8> = order.iter().map(|&i| labels[i]).collect();
    let w: Vec<f64> = order.iter().map(|&i| weights[i] / mean_weight).collect();
    let cols: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| order.iter().map(|&i| c[i]).collect())
        .collect();

    let positive: f64 = y.iter().zip(&w).filter(|(y, _)| **y == 1).map(|(_, w)| w).sum();
    let total: f64 = w.iter().sum();
    // From the raw weights: normalizing first costs a few ulps of the prior.
    let raw_positive: f64 = labels.iter().zip(weights).filter(|(y, _)| **y == 1).map(|(_, w)| w).sum();
    let prior = raw_positive / weight_sum;
    let base_score = logit_clamped(prior);
    let mut forest = Forest {
        base_score,
        trees: Vec::new(),
        feature_names: names.to_vec(),
        feature_kinds: kinds.to_vec(),
    };
    let mut margins = vec![base_score; n];
    let mut loss = weighted_log_loss(&margins, &y, &w);
    let mut loss_history = vec![loss];
    let degenerate = positive == 0.0 || positive == total;
    if degenerate {
        tracing::warn!("single-class training labels; emitting a constant model");
        return Ok(FitOutcome {
            forest,
            loss_history,
            degenerate,
        });
    }

    let data = binning::BinnedMatrix::build(&cols, kinds, hp.n_bins)?;
    let all_rows: Vec<u32> = (0..n as u32).collect();
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut candidate = vec![0.0; n];

    for iteration in 0..hp.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            g[i] = w[i] * (p - f64::from(y[i]));
            h[i] = w[i] * (p * (1.0 - p)).max(1e-16);
        }
        let grown = grow::Grower::new(&data, hp, &g, &h, &w).grow(all_rows.clone());

        // Shrink the step until the loss does not increase.
        let mut step = hp.learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            for (node, rows) in &grown.leaf_rows {
                let Node::Leaf { value, .. } = grown.tree.nodes[*node] else {
                    unreachable!()
                };
                for &r in rows {
                    candidate[r as usize] = margins[r as usize] + step * value;
                }
            }
            let new_loss = weighted_log_loss(&candidate, &y, &w);
            if new_loss <= loss {
                accepted = Some(new_loss);
                break;
            }
            step *= 0.5;
        }
        let Some(new_loss) = accepted else {
            tracing::debug!(iteration, "no loss-reducing step; stopping early");
            break;
        };
        let mut tree = grown.tree;
        for node in &mut tree.nodes {
            if let Node::Leaf { value, .. } = node {
                *value *= step;
            }
        }
        std::mem::swap(&mut margins, &mut candidate);
        loss = new_loss;
        loss_history.push(loss);
        forest.trees.push(tree);
    }

    Ok(FitOutcome {
        forest,
        loss_history,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn zero_trees_predicts_weighted_prior() {
        let labels = [1, 0, 0, 1, 0];
        let weights = [1.0, 2.0, 1.0, 0.5, 3.0];
        let hp = Hyperparams {
            n_trees: 0,
            ..Hyperparams::default()
        };
        let out = fit_columns(&[vec![0.0; 5]], &[FeatureKind::Numeric], &names(1), &labels, &weights, &hp).unwrap();
        let prior = 1.5 / 7.5;
        assert!((out.forest.predict_probability(&[0.0]) - prior).abs() < 1e-15);
    }

    #[test]
    fn single_class_is_degenerate() {
        let out = fit_columns(
            &[vec![1.0, 2.0]],
            &[FeatureKind::Numeric],
            &names(1),
            &[1, 1],
            &[1.0, 1.0],
            &Hyperparams::default(),
        )
        .unwrap();
        assert!(out.degenerate);
        assert!(out.forest.trees.is_empty());
        assert_eq!(out.forest.base_score, LOG_ODDS_CLAMP);
    }

    #[test]
    fn zero_weight_sum_errors() {
        let r = fit_columns(
            &[vec![1.0, 2.0]],
            &[FeatureKind::Numeric],
            &names(1),
            &[1, 0],
            &[0.0, 0.0],
            &Hyperparams::default(),
        );
        assert!(matches!(r, Err(Error::ZeroWeightSum)));
    }

    #[test]
    fn stump_separates_threshold_data() {
        let x: Vec<f64> = (-20..20).map(|i| i as f64 / 4.0).collect();
        let labels: Vec<u8> = x.iter().map(|v| u8::from(*v >= 0.0)).collect();
        let hp = Hyperparams {
            n_trees: 50,
            max_depth: 1,
            min_weighted_samples_per_leaf: 1.0,
            ..Hyperparams::default()
        };
        let out = fit_columns(&[x.clone()], &[FeatureKind::Numeric], &names(1), &labels, &vec![1.0; x.len()], &hp).unwrap();
        for (v, y) in x.iter().zip(&labels) {
            let predicted = u8::from(out.forest.predict_score(&[*v]) >= 50);
            assert_eq!(predicted, *y, "x = {v}");
        }
        assert!(out.forest.trees.iter().all(|t| t.depth() <= 1));
    }

    #[test]
    fn categorical_split_groups_levels() {
        // codes 1 and 3 positive, 2 and 4 negative: no single numeric cut works
        let codes: Vec<f64> = (0..80).map(|i| (i % 4 + 1) as f64).collect();
        let labels: Vec<u8> = codes.iter().map(|c| u8::from(*c == 1.0 || *c == 3.0)).collect();
        let hp = Hyperparams {
            n_trees: 30,
            max_depth: 1,
            learning_rate: 0.3,
            min_weighted_samples_per_leaf: 1.0,
            ..Hyperparams::default()
        };
        let out = fit_columns(&[codes.clone()], &[FeatureKind::Categorical], &names(1), &labels, &vec![1.0; 80], &hp).unwrap();
        for (c, y) in codes.iter().zip(&labels) {
            assert_eq!(u8::from(out.forest.predict_score(&[*c]) >= 50), *y);
        }
    }

    #[test]
    fn missing_values_learn_a_direction() {
        // missing is strongly positive
        let x: Vec<f64> = (0..60).map(|i| if i % 3 == 0 { f64::NAN } else { i as f64 }).collect();
        let labels: Vec<u8> = x.iter().map(|v| u8::from(v.is_nan())).collect();
        let hp = Hyperparams {
            n_trees: 40,
            max_depth: 2,
            learning_rate: 0.3,
            min_weighted_samples_per_leaf: 1.0,
            ..Hyperparams::default()
        };
        let out = fit_columns(&[x], &[FeatureKind::Numeric], &names(1), &labels, &vec![1.0; 60], &hp).unwrap();
        assert!(out.forest.predict_score(&[f64::NAN]) > 50);
        assert!(out.forest.predict_score(&[7.0]) < 50);
    }
}
