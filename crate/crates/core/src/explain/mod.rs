//! Per-prediction Shapley attributions on the margin (log-odds) scale.

pub mod treeshap;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::Forest;
use crate::matrix::FeatureMatrix;

pub use treeshap::{bruteforce_shapley, conditional_expectation, tree_shap_into};

pub const BRUTEFORCE_FEATURE_LIMIT: usize = 12;
pub const DEFAULT_TOP_K: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub change_id: String,
    /// Expected margin under the training distribution encoded by leaf covers.
    pub base_value: f64,
    /// One value per forest feature, in feature order.
    pub values: Vec<f64>,
    pub model_version: String,
}

impl Attribution {
    pub fn total(&self) -> f64 {
        self.base_value + self.values.iter().sum::<f64>()
    }
}

fn check_row(forest: &Forest, row: &[f64]) -> Result<()> {
    if row.len() != forest.n_features() {
        return Err(Error::LengthMismatch(format!(
            "row has {} values, forest expects {}",
            row.len(),
            forest.n_features()
        )));
    }
    if !forest.has_covers() {
        return Err(Error::MissingCovers);
    }
    Ok(())
}

/// Raw per-feature values plus the base value.
pub fn tree_shap_values(forest: &Forest, row: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_row(forest, row)?;
    let mut phi = vec![0.0; forest.n_features()];
    for tree in &forest.trees {
        tree_shap_into(tree, row, &mut phi);
    }
    Ok((forest.expected_margin(), phi))
}

pub fn tree_shap(forest: &Forest, row: &[f64], change_id: &str, model_version: &str) -> Result<Attribution> {
    let (base_value, values) = tree_shap_values(forest, row)?;
    Ok(Attribution {
        change_id: change_id.to_string(),
        base_value,
        values,
        model_version: model_version.to_string(),
    })
}

/// Reference Shapley values by coalition enumeration; refuses wide forests.
pub fn exact_shapley_bruteforce(forest: &Forest, row: &[f64], change_id: &str, model_version: &str) -> Result<Attribution> {
    if forest.n_features() > BRUTEFORCE_FEATURE_LIMIT {
        return Err(Error::TooManyFeatures {
            features: forest.n_features(),
            limit: BRUTEFORCE_FEATURE_LIMIT,
        });
    }
    check_row(forest, row)?;
    Ok(Attribution {
        change_id: change_id.to_string(),
        base_value: forest.expected_margin(),
        values: bruteforce_shapley(&forest.trees, row, forest.n_features()),
        model_version: model_version.to_string(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapseMode {
    /// Largest signed value.
    #[default]
    SignedMax,
    /// Value with the largest magnitude, sign kept.
    MaxAbsolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Representative component of a collapsed group.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedAttribution {
    pub change_id: String,
    pub base_value: f64,
    pub contributions: Vec<Contribution>,
    pub model_version: String,
}

impl GroupedAttribution {
    /// The `n` contributions of largest magnitude, largest first.
    pub fn top(&self, n: usize) -> Vec<Contribution> {
        let mut c = self.contributions.clone();
        c.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()).then_with(|| a.feature.cmp(&b.feature)));
        c.truncate(n);
        c
    }
}

/// Picks the representative index of `members` under `mode`.
pub fn collapse_values(values: &[f64], mode: CollapseMode) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        let better = match (best, mode) {
            (None, _) => true,
            (Some((_, b)), CollapseMode::SignedMax) => v > b,
            (Some((_, b)), CollapseMode::MaxAbsolute) => v.abs() > b.abs(),
        };
        if better {
            best = Some((i, v));
        }
    }
    best
}

/// Collapses each group to one signed value. `groups` maps group label to
/// feature indices; ungrouped features pass through unchanged.
pub fn group_collapse(
    attribution: &Attribution,
    feature_names: &[String],
    groups: &BTreeMap<String, Vec<usize>>,
    mode: CollapseMode,
) -> GroupedAttribution {
    let mut group_of: Vec<Option<&str>> = vec![None; feature_names.len()];
    for (g, members) in groups {
        for &m in members {
            group_of[m] = Some(g.as_str());
        }
    }
    let mut contributions = Vec::new();
    let mut emitted = std::collections::BTreeSet::new();
    for (i, name) in feature_names.iter().enumerate() {
        match group_of[i] {
            None => contributions.push(Contribution {
                feature: name.clone(),
                value: attribution.values[i],
                group: None,
                component: None,
            }),
            Some(g) => {
                if !emitted.insert(g) {
                    continue;
                }
                let members = &groups[g];
                let vals: Vec<f64> = members.iter().map(|&m| attribution.values[m]).collect();
                if let Some((k, v)) = collapse_values(&vals, mode) {
                    contributions.push(Contribution {
                        feature: g.to_string(),
                        value: v,
                        group: Some(g.to_string()),
                        component: Some(feature_names[members[k]].clone()),
                    });
                }
            }
        }
    }
    GroupedAttribution {
        change_id: attribution.change_id.clone(),
        base_value: attribution.base_value,
        contributions,
        model_version: attribution.model_version.clone(),
    }
}

/// Ungrouped attribution export in the same shape as the grouped one.
pub fn export(attribution: &Attribution, feature_names: &[String], groups: &BTreeMap<String, Vec<usize>>) -> GroupedAttribution {
    let mut group_of: BTreeMap<usize, &str> = BTreeMap::new();
    for (g, members) in groups {
        for &m in members {
            group_of.insert(m, g);
        }
    }
    GroupedAttribution {
        change_id: attribution.change_id.clone(),
        base_value: attribution.base_value,
        contributions: feature_names
            .iter()
            .enumerate()
            .map(|(i, name)| Contribution {
                feature: name.clone(),
                value: attribution.values[i],
                group: group_of.get(&i).map(|g| g.to_string()),
                component: None,
            })
            .collect(),
        model_version: attribution.model_version.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub rows: Vec<ImportanceRow>,
    pub evaluated_rows: usize,
}

/// Mean |shap| per feature over `matrix`, top `k`. A group's per-row value
/// is the sum of its components' values.
pub fn global_importance(
    forest: &Forest,
    matrix: &FeatureMatrix,
    groups: &BTreeMap<String, Vec<usize>>,
    k: usize,
) -> Result<ImportanceReport> {
    if matrix.n_rows() == 0 {
        return Err(Error::InvalidInput("importance needs at least one row".into()));
    }
    let phis: Vec<Vec<f64>> = (0..matrix.n_rows())
        .map(|i| tree_shap_values(forest, &matrix.row(i)).map(|(_, phi)| phi))
        .collect::<Result<_>>()?;
    Ok(importance_from_values(&phis, &matrix.names(), groups, k))
}

pub fn importance_from_values(
    phis: &[Vec<f64>],
    feature_names: &[String],
    groups: &BTreeMap<String, Vec<usize>>,
    k: usize,
) -> ImportanceReport {
    let mut grouped = vec![false; feature_names.len()];
    let mut units: Vec<(String, Vec<usize>)> = Vec::new();
    for (g, members) in groups {
        for &m in members {
            grouped[m] = true;
        }
        units.push((g.clone(), members.clone()));
    }
    for (i, name) in feature_names.iter().enumerate() {
        if !grouped[i] {
            units.push((name.clone(), vec![i]));
        }
    }
    let n = phis.len() as f64;
    let mut rows: Vec<ImportanceRow> = units
        .into_iter()
        .map(|(feature, members)| ImportanceRow {
            feature,
            mean_abs_shap: phis
                .iter()
                .map(|phi| members.iter().map(|&m| phi[m]).sum::<f64>().abs())
                .sum::<f64>()
                / n,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.mean_abs_shap
            .total_cmp(&a.mean_abs_shap)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    rows.truncate(k);
    ImportanceReport {
        rows,
        evaluated_rows: phis.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{Node, SplitRule, Tree};
    use crate::matrix::FeatureKind;

    fn forest(trees: Vec<Tree>, n: usize) -> Forest {
        Forest {
            base_score: -1.0,
            trees,
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            feature_kinds: vec![FeatureKind::Numeric; n],
        }
    }

    fn stump(feature: usize, a: f64, b: f64, wl: f64, wr: f64) -> Tree {
        Tree {
            nodes: vec![
                Node::Split {
                    feature,
                    rule: SplitRule::Numeric { threshold: 0.0 },
                    default_left: true,
                    left: 1,
                    right: 2,
                    gain: 1.0,
                    cover: wl + wr,
                },
                Node::Leaf { value: a, cover: wl },
                Node::Leaf { value: b, cover: wr },
            ],
        }
    }

    #[test]
    fn single_leaf_forest_has_zero_attributions() {
        let f = forest(vec![Tree::leaf(0.3, 5.0), Tree::leaf(-0.1, 5.0)], 3);
        let a = tree_shap(&f, &[1.0, 2.0, 3.0], "c", "m").unwrap();
        assert_eq!(a.values, vec![0.0; 3]);
        assert!((a.base_value - (-1.0 + 0.3 - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn stump_closed_form() {
        let (a, b, wl, wr) = (-0.4, 0.9, 3.0, 1.0);
        let f = forest(vec![stump(1, a, b, wl, wr)], 2);
        let row = [0.0, 5.0];
        let expected = b - (wl / (wl + wr) * a + wr / (wl + wr) * b);
        let shap = tree_shap(&f, &row, "c", "m").unwrap();
        let brute = exact_shapley_bruteforce(&f, &row, "c", "m").unwrap();
        assert!((shap.values[1] - expected).abs() < 1e-12);
        assert!((brute.values[1] - expected).abs() < 1e-12);
        assert_eq!(shap.values[0], 0.0);
    }

    #[test]
    fn symmetric_features_share_credit() {
        // x0 then x1, both with identical split statistics
        let t = Tree {
            nodes: vec![
                Node::Split {
                    feature: 0,
                    rule: SplitRule::Numeric { threshold: 0.0 },
                    default_left: true,
                    left: 1,
                    right: 2,
                    gain: 1.0,
                    cover: 4.0,
                },
                Node::Leaf { value: 0.0, cover: 2.0 },
                Node::Split {
                    feature: 1,
                    rule: SplitRule::Numeric { threshold: 0.0 },
                    default_left: true,
                    left: 3,
                    right: 4,
                    gain: 1.0,
                    cover: 2.0,
                },
                Node::Leaf { value: 0.0, cover: 1.0 },
                Node::Leaf { value: 1.0, cover: 1.0 },
            ],
        };
        // AND-like function with marginals 1/2 each: symmetric players
        let t2 = Tree {
            nodes: vec![
                Node::Split {
                    feature: 1,
                    rule: SplitRule::Numeric { threshold: 0.0 },
                    default_left: true,
                    left: 1,
                    right: 2,
                    gain: 1.0,
                    cover: 4.0,
                },
                Node::Leaf { value: 0.0, cover: 2.0 },
                Node::Split {
                    feature: 0,
                    rule: SplitRule::Numeric { threshold: 0.0 },
                    default_left: true,
                    left: 3,
                    right: 4,
                    gain: 1.0,
                    cover: 2.0,
                },
                Node::Leaf { value: 0.0, cover: 1.0 },
                Node::Leaf { value: 1.0, cover: 1.0 },
            ],
        };
        let f = forest(vec![t, t2], 2);
        let a = exact_shapley_bruteforce(&f, &[1.0, 1.0], "c", "m").unwrap();
        assert!((a.values[0] - a.values[1]).abs() < 1e-15);
        let s = tree_shap(&f, &[1.0, 1.0], "c", "m").unwrap();
        assert!((s.values[0] - s.values[1]).abs() < 1e-12);
    }

    #[test]
    fn bruteforce_refuses_wide_forests() {
        let f = forest(vec![], 13);
        assert!(matches!(
            exact_shapley_bruteforce(&f, &[0.0; 13], "c", "m"),
            Err(Error::TooManyFeatures { .. })
        ));
    }

    #[test]
    fn zero_cover_is_rejected() {
        let f = forest(vec![Tree::leaf(1.0, 0.0)], 1);
        assert!(matches!(tree_shap(&f, &[0.0], "c", "m"), Err(Error::MissingCovers)));
    }

    fn attribution(values: Vec<f64>) -> Attribution {
        Attribution {
            change_id: "c".into(),
            base_value: 0.0,
            values,
            model_version: "m".into(),
        }
    }

    fn collapse_one(values: &[f64], mode: CollapseMode) -> f64 {
        let names: Vec<String> = (0..values.len()).map(|i| format!("d{i}")).collect();
        let groups = BTreeMap::from([("desc".to_string(), (0..values.len()).collect())]);
        let g = group_collapse(&attribution(values.to_vec()), &names, &groups, mode);
        assert_eq!(g.contributions.len(), 1);
        g.contributions[0].value
    }

    #[test]
    fn group_collapse_takes_signed_max() {
        assert_eq!(collapse_one(&[-0.2, 0.5, 0.1], CollapseMode::SignedMax), 0.5);
        assert_eq!(collapse_one(&[-0.3, -0.1], CollapseMode::SignedMax), -0.1);
        assert_eq!(collapse_one(&[0.7], CollapseMode::SignedMax), 0.7);
        assert_eq!(collapse_one(&[-0.3, -0.1], CollapseMode::MaxAbsolute), -0.3);
    }

    #[test]
    fn ungrouped_features_pass_through() {
        let names: Vec<String> = vec!["a".into(), "d0".into(), "d1".into(), "b".into()];
        let groups = BTreeMap::from([("desc".to_string(), vec![1, 2])]);
        let g = group_collapse(&attribution(vec![0.1, -0.5, 0.2, -0.4]), &names, &groups, CollapseMode::SignedMax);
        let got: Vec<(&str, f64)> = g.contributions.iter().map(|c| (c.feature.as_str(), c.value)).collect();
        assert_eq!(got, vec![("a", 0.1), ("desc", 0.2), ("b", -0.4)]);
        assert_eq!(g.contributions[1].component.as_deref(), Some("d1"));
    }

    #[test]
    fn importance_is_mean_absolute_value() {
        let r = importance_from_values(&[vec![0.1], vec![-0.3]], &["x".to_string()], &BTreeMap::new(), 15);
        assert!((r.rows[0].mean_abs_shap - 0.2).abs() < 1e-15);
    }

    #[test]
    fn importance_truncates_to_k_and_ranks_unused_last() {
        let names: Vec<String> = (0..20).map(|i| format!("f{i:02}")).collect();
        let phis: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..20).map(|i| if i == 0 { 0.0 } else { (i * (r + 1)) as f64 }).collect())
            .collect();
        let r = importance_from_values(&phis, &names, &BTreeMap::new(), 15);
        assert_eq!(r.rows.len(), 15);
        assert!(r.rows.windows(2).all(|w| w[0].mean_abs_shap >= w[1].mean_abs_shap));
        let all = importance_from_values(&phis, &names, &BTreeMap::new(), 20);
        assert_eq!(all.rows.last().unwrap().feature, "f00");
        assert_eq!(all.rows.last().unwrap().mean_abs_shap, 0.0);
    }
}
