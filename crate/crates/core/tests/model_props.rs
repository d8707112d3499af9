//! Properties of the booster and of the attributions it produces.

use std::collections::BTreeMap;

use changerisk::explain::{global_importance, group_collapse, tree_shap, tree_shap_into, CollapseMode};
use changerisk::gbdt::tree::{Node, Tree};
use changerisk::gbdt::{fit_columns, margin_to_score, FitOutcome, Forest, Hyperparams};
use changerisk::{ColumnInfo, FeatureKind, FeatureMatrix};
use proptest::prelude::*;

/// Column-major data: three numeric columns with some NaN, one categorical
/// column, binary labels and priority-like weights.
#[derive(Debug, Clone)]
struct Data {
    cols: Vec<Vec<f64>>,
    labels: Vec<u8>,
    weights: Vec<f64>,
}

const KINDS: [FeatureKind; 4] = [
    FeatureKind::Numeric,
    FeatureKind::Numeric,
    FeatureKind::Numeric,
    FeatureKind::Categorical,
];

fn names() -> Vec<String> {
    (0..KINDS.len()).map(|i| format!("x{i}")).collect()
}

fn data() -> impl Strategy<Value = Data> {
    let cell = (prop::option::weighted(0.9, -3.0f64..3.0), 0u8..5, prop::bool::weighted(0.3), prop::bool::ANY);
    prop::collection::vec((cell.clone(), cell.clone(), cell), 60..240).prop_map(|rows| {
        let mut cols = vec![Vec::new(); 4];
        let mut labels = Vec::new();
        let mut weights = Vec::new();
        for (i, ((a, cat, heavy, noise), (b, _, _, _), (c, _, _, _))) in rows.into_iter().enumerate() {
            let x = [a.unwrap_or(f64::NAN), b.unwrap_or(f64::NAN), c.unwrap_or(f64::NAN)];
            for (j, v) in x.iter().enumerate() {
                cols[j].push(*v);
            }
            cols[3].push(f64::from(cat));
            let signal = x[0].is_nan() || x[0] > 0.5 || cat == 2;
            let y = u8::from(signal ^ (noise && i % 5 == 0));
            labels.push(y);
            weights.push(if y == 1 && heavy { 5.0 } else { 1.0 });
        }
        // both classes present
        labels[0] = 0;
        labels[1] = 1;
        Data { cols, labels, weights }
    })
}

fn hp() -> Hyperparams {
    Hyperparams {
        n_trees: 12,
        max_depth: 3,
        min_weighted_samples_per_leaf: 5.0,
        learning_rate: 0.3,
        ..Hyperparams::default()
    }
}

fn fit(d: &Data, hp: &Hyperparams) -> FitOutcome {
    fit_columns(&d.cols, &KINDS, &names(), &d.labels, &d.weights, hp).expect("fit")
}

fn row(d: &Data, r: usize) -> Vec<f64> {
    d.cols.iter().map(|c| c[r]).collect()
}

fn check_covers(tree: &Tree, i: usize) -> Result<(), TestCaseError> {
    if let Node::Split { left, right, cover, .. } = &tree.nodes[i] {
        let sum = tree.nodes[*left].cover() + tree.nodes[*right].cover();
        prop_assert!((sum - cover).abs() <= 1e-9 * cover.max(1.0), "children cover {sum} vs {cover}");
        check_covers(tree, *left)?;
        check_covers(tree, *right)?;
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_never_rises_and_structure_holds(d in data()) {
        let hp = hp();
        let out = fit(&d, &hp);
        for w in out.loss_history.windows(2) {
            prop_assert!(w[1] <= w[0], "{} -> {}", w[0], w[1]);
        }
        prop_assert!(out.forest.trees.len() <= hp.n_trees);
        for t in &out.forest.trees {
            prop_assert!(t.depth() <= hp.max_depth);
            check_covers(t, 0)?;
        }
    }

    #[test]
    fn row_order_does_not_matter(d in data(), shift in 1usize..50) {
        let mut p = d.clone();
        let k = shift % d.labels.len();
        for c in &mut p.cols {
            c.rotate_left(k);
            c.reverse();
        }
        p.labels.rotate_left(k);
        p.labels.reverse();
        p.weights.rotate_left(k);
        p.weights.reverse();
        prop_assert_eq!(fit(&d, &hp()).forest, fit(&p, &hp()).forest);
    }

    #[test]
    fn doubling_weights_changes_nothing(d in data()) {
        let mut doubled = d.clone();
        for w in &mut doubled.weights {
            *w *= 2.0;
        }
        let a = fit(&d, &hp());
        let b = fit(&doubled, &hp());
        for r in 0..d.labels.len() {
            let x = row(&d, r);
            prop_assert_eq!(a.forest.predict_margin(&x), b.forest.predict_margin(&x));
        }
    }

    #[test]
    fn unused_features_have_no_effect(d in data(), junk in -1e6f64..1e6) {
        let out = fit(&d, &Hyperparams { n_trees: 3, max_depth: 1, ..hp() });
        let used = out.forest.used_features();
        for r in 0..d.labels.len() {
            let x = row(&d, r);
            let mut y = x.clone();
            for j in 0..x.len() {
                if !used.contains(&j) {
                    y[j] = junk;
                }
            }
            prop_assert_eq!(out.forest.predict_margin(&x), out.forest.predict_margin(&y));
            let a = tree_shap(&out.forest, &x, "r", "v").unwrap();
            for j in (0..x.len()).filter(|j| !used.contains(j)) {
                prop_assert_eq!(a.values[j], 0.0);
            }
        }
    }

    #[test]
    fn score_is_monotone_in_margin(mut margins in prop::collection::vec(-40.0f64..40.0, 2..200)) {
        margins.sort_by(f64::total_cmp);
        let scores: Vec<u8> = margins.iter().map(|m| margin_to_score(*m)).collect();
        prop_assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(scores.iter().all(|s| *s <= 100));
    }

    #[test]
    fn attributions_are_locally_accurate_and_additive(d in data()) {
        let out = fit(&d, &hp());
        let forest = &out.forest;
        for r in (0..d.labels.len()).step_by(7) {
            let x = row(&d, r);
            let a = tree_shap(forest, &x, "r", "v").unwrap();
            prop_assert!((a.total() - forest.predict_margin(&x)).abs() <= 1e-9);
            let mut per_tree = vec![0.0; x.len()];
            for t in &forest.trees {
                let single = Forest { base_score: 0.0, trees: vec![t.clone()], ..forest.clone() };
                let s = tree_shap(&single, &x, "r", "v").unwrap();
                for (acc, v) in per_tree.iter_mut().zip(&s.values) {
                    *acc += v;
                }
                let mut direct = vec![0.0; x.len()];
                tree_shap_into(t, &x, &mut direct);
                prop_assert_eq!(&direct, &s.values);
            }
            for (p, v) in per_tree.iter().zip(&a.values) {
                prop_assert!((p - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn grouping_passes_other_features_through(d in data(), signed in any::<bool>()) {
        let out = fit(&d, &hp());
        let names = names();
        let groups: BTreeMap<String, Vec<usize>> = [("pair".to_string(), vec![0, 2])].into();
        let mode = if signed { CollapseMode::SignedMax } else { CollapseMode::MaxAbsolute };
        let a = tree_shap(&out.forest, &row(&d, 3), "r", "v").unwrap();
        let g = group_collapse(&a, &names, &groups, mode);
        prop_assert_eq!(g.contributions.len(), 3);
        for (j, name) in names.iter().enumerate().filter(|(j, _)| ![0, 2].contains(j)) {
            let c = g.contributions.iter().find(|c| &c.feature == name).unwrap();
            prop_assert_eq!(c.value, a.values[j]);
            prop_assert!(c.group.is_none());
        }
        let pair = g.contributions.iter().find(|c| c.feature == "pair").unwrap();
        let expected = match mode {
            CollapseMode::SignedMax => a.values[0].max(a.values[2]),
            CollapseMode::MaxAbsolute => if a.values[2].abs() > a.values[0].abs() { a.values[2] } else { a.values[0] },
        };
        prop_assert_eq!(pair.value, expected);
    }

    #[test]
    fn importance_is_ranked_and_truncated(d in data(), k in 1usize..6) {
        let out = fit(&d, &hp());
        let columns = KINDS.iter().zip(names()).map(|(kind, name)| ColumnInfo { name, kind: *kind }).collect();
        let ids = (0..d.labels.len()).map(|i| format!("r{i}")).collect();
        let m = FeatureMatrix { fingerprint: "fp".into(), row_ids: ids, columns, values: d.cols.clone() };
        let report = global_importance(&out.forest, &m, &BTreeMap::new(), k).unwrap();
        prop_assert!(report.rows.len() <= k);
        prop_assert!(report.rows.windows(2).all(|w| w[0].mean_abs_shap >= w[1].mean_abs_shap));
    }
}
