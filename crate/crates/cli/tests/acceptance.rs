//! End-to-end acceptance checks. Runs without the libtest harness and prints
//! one PASS or FAIL line per criterion; exits nonzero if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use changerisk::evalkit::{
    auc, confusion, default_grid, fbeta_from_rates, precision, threshold_search, weighted_fbeta, weighted_recall,
    ClassRates, WeightedConfusion,
};
use changerisk::explain::tree_shap;
use changerisk::gbdt::tree::{Node, SplitRule, Tree};
use changerisk::gbdt::{fit_columns, Forest, Hyperparams, TrainedModel};
use changerisk::harness::{
    ablation_run, prepare, run_pipeline, sliding_window_run, synth_generate, PipelineConfig, SynthConfig, WindowPlan,
};
use changerisk::rulebase::RuleConfig;
use changerisk::{Corpus, FeatureKind, FeatureMatrix, FeatureSchema};
use changerisk_service::{router, store_digest, AppState, IngestRequest, ServiceConfig};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn run(name: &str, budget: Duration, f: fn() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let outcome = match outcome {
        Ok(_) if elapsed > budget => Err(format!("took {elapsed:.1?}, budget {budget:?}")),
        other => other,
    };
    match &outcome {
        Ok(detail) => println!("PASS {name} ({elapsed:.1?}): {detail}"),
        Err(why) => println!("FAIL {name} ({elapsed:.1?}): {why}"),
    }
    outcome.is_ok()
}

fn main() {
    let checks: [(&str, u64, fn() -> Check); 9] = [
        ("metric_kernels", 30, metric_kernels),
        ("shap_exactness", 120, shap_exactness),
        ("gbdt_sanity", 60, gbdt_sanity),
        ("auc_oracle", 30, auc_oracle),
        ("threshold_search", 30, threshold_search_scan),
        ("baseline_vs_model", 300, baseline_vs_model),
        ("team_ablation", 600, team_ablation),
        ("backtest_stability", 600, backtest_stability),
        ("service_contract", 120, service_contract),
    ];
    let mut failed = 0;
    for (name, secs, f) in checks {
        if !run(name, Duration::from_secs(secs), f) {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

// Metric kernels

/// Mass-weighted recall reduces to the weighted share of correct predictions.
fn oracle_wr(c: &WeightedConfusion) -> f64 {
    (c.tp + c.tn) / (c.tp + c.fp + c.fn_ + c.tn)
}

/// Count-form F-beta per class, mass-weighted; an empty class is skipped.
fn oracle_wf(c: &WeightedConfusion, beta: f64) -> f64 {
    let b2 = beta * beta;
    let n = c.tp + c.fp + c.fn_ + c.tn;
    let f = |tp: f64, fp: f64, fn_: f64| {
        let den = (1.0 + b2) * tp + b2 * fn_ + fp;
        if den == 0.0 {
            0.0
        } else {
            (1.0 + b2) * tp / den
        }
    };
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    let mut total = 0.0;
    if pos > 0.0 {
        total += pos / n * f(c.tp, c.fp, c.fn_);
    }
    if neg > 0.0 {
        total += neg / n * f(c.tn, c.fn_, c.fp);
    }
    total
}

fn rows_for(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<u8>, Vec<u8>) {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (count, score, label) in [(tp, 90, 1), (fp, 80, 0), (fn_, 10, 1), (tn, 20, 0)] {
        scores.extend(std::iter::repeat_n(score, count));
        labels.extend(std::iter::repeat_n(label, count));
    }
    (scores, labels)
}

fn metric_kernels() -> Check {
    let conf = |tp, fp, fn_, tn| WeightedConfusion { tp, fp, fn_, tn };
    // Worked cases.
    let wr = weighted_recall(&conf(1.0, 0.0, 1.0, 8.0)).map_err(|e| e.to_string())?;
    ensure!(close(wr, 0.9, 1e-12), "worked recall case: {wr}");
    let wr = weighted_recall(&conf(0.0, 0.0, 2.0, 8.0)).map_err(|e| e.to_string())?;
    ensure!(close(wr, 0.8, 1e-12), "worked recall case: {wr}");
    let rates = [
        ClassRates {
            mass: 0.2,
            precision: 0.5,
            recall: 0.5,
        },
        ClassRates {
            mass: 0.8,
            precision: 1.0,
            recall: 1.0,
        },
    ];
    let wf = fbeta_from_rates(&rates, 2.0).map_err(|e| e.to_string())?;
    ensure!(close(wf, 0.9, 1e-12), "worked F2 case: {wf}");

    let counts: [(usize, usize, usize, usize); 24] = [
        (1, 0, 1, 8),
        (0, 0, 2, 8),
        (1, 1, 1, 7),
        (5, 0, 0, 5),
        (0, 5, 5, 0),
        (3, 2, 1, 94),
        (10, 40, 2, 948),
        (24, 976, 0, 0),
        (0, 0, 24, 976),
        (0, 0, 0, 10),
        (10, 0, 0, 0),
        (0, 10, 0, 0),
        (7, 3, 3, 7),
        (1, 99, 0, 900),
        (50, 50, 50, 50),
        (2, 0, 98, 900),
        (13, 17, 19, 23),
        (100, 1, 1, 1),
        (1, 1, 100, 1),
        (9, 91, 1, 899),
        (33, 0, 67, 900),
        (4, 12, 6, 78),
        (0, 1, 1, 0),
        (240, 3000, 60, 6700),
    ];
    let mut checked = 0;
    for &(tp, fp, fn_, tn) in &counts {
        // Unit weights: the kernel's confusion is the integer count table.
        let (scores, labels) = rows_for(tp, fp, fn_, tn);
        let c = confusion(&scores, &labels, &vec![1.0; labels.len()], 50).map_err(|e| e.to_string())?;
        let exact = conf(tp as f64, fp as f64, fn_ as f64, tn as f64);
        ensure!(c == exact, "counts {:?} became {c:?}", (tp, fp, fn_, tn));
        let p = precision(&c).value;
        let textbook = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        ensure!(p == textbook, "precision {p} vs {textbook}");
        for beta in [1.0, 2.0, 0.5] {
            let wf = weighted_fbeta(&c, beta).map_err(|e| e.to_string())?;
            ensure!(close(wf, oracle_wf(&c, beta), 1e-12), "wF{beta} on {c:?}: {wf}");
        }
        let wr = weighted_recall(&c).map_err(|e| e.to_string())?;
        ensure!(close(wr, oracle_wr(&c), 1e-12), "wR on {c:?}: {wr} vs {}", oracle_wr(&c));

        // Priority weights: positives weigh 1 or 5.
        let weights: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| if y == 1 && i % 3 == 0 { 5.0 } else { 1.0 })
            .collect();
        let c = confusion(&scores, &labels, &weights, 50).map_err(|e| e.to_string())?;
        let mut hand = conf(0.0, 0.0, 0.0, 0.0);
        for ((s, y), w) in scores.iter().zip(&labels).zip(&weights) {
            match (*y == 1, *s >= 50) {
                (true, true) => hand.tp += w,
                (false, true) => hand.fp += w,
                (true, false) => hand.fn_ += w,
                (false, false) => hand.tn += w,
            }
        }
        ensure!(c == hand, "weighted confusion {c:?} vs {hand:?}");
        let wr = weighted_recall(&c).map_err(|e| e.to_string())?;
        ensure!(close(wr, oracle_wr(&c), 1e-12), "weighted wR on {c:?}");
        let wf = weighted_fbeta(&c, 2.0).map_err(|e| e.to_string())?;
        ensure!(close(wf, oracle_wf(&c, 2.0), 1e-12), "weighted wF2 on {c:?}");
        checked += 1;
    }
    Ok(format!("{checked} confusion matrices, unit and priority weights"))
}

// TreeSHAP against coalition enumeration

fn random_tree(rng: &mut ChaCha8Rng, kinds: &[FeatureKind], usable: usize, max_depth: usize) -> Tree {
    fn grow(
        rng: &mut ChaCha8Rng,
        kinds: &[FeatureKind],
        usable: usize,
        depth: usize,
        max_depth: usize,
        cover: f64,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let at = nodes.len();
        if depth == max_depth || (depth > 0 && rng.random_bool(0.25)) {
            nodes.push(Node::Leaf {
                value: rng.random_range(-2.0..2.0),
                cover,
            });
            return at;
        }
        nodes.push(Node::Leaf { value: 0.0, cover });
        let feature = rng.random_range(0..usable);
        let rule = match kinds[feature] {
            FeatureKind::Numeric => SplitRule::Numeric {
                threshold: rng.random_range(-1.0..1.0),
            },
            FeatureKind::Categorical => {
                let mut left: Vec<u32> = (0..5).filter(|_| rng.random_bool(0.5)).collect();
                if left.is_empty() {
                    left.push(rng.random_range(0..5));
                }
                SplitRule::Categorical { left_categories: left }
            }
        };
        let share = rng.random_range(0.1..0.9);
        let default_left = rng.random_bool(0.5);
        let left = grow(rng, kinds, usable, depth + 1, max_depth, cover * share, nodes);
        let right = grow(rng, kinds, usable, depth + 1, max_depth, cover - cover * share, nodes);
        nodes[at] = Node::Split {
            feature,
            rule,
            default_left,
            left,
            right,
            gain: 0.0,
            cover,
        };
        at
    }
    let mut nodes = Vec::new();
    let cover = rng.random_range(50.0..500.0);
    grow(rng, kinds, usable, 0, max_depth, cover, &mut nodes);
    Tree { nodes }
}

fn goes_left(rule: &SplitRule, x: f64, default_left: bool) -> bool {
    if x.is_nan() {
        return default_left;
    }
    match rule {
        SplitRule::Numeric { threshold } => x <= *threshold,
        SplitRule::Categorical { left_categories } => x >= 0.0 && left_categories.contains(&(x as u32)),
    }
}

/// Expected tree output with the features in `known` fixed to `row` and the
/// rest averaged over the cover-weighted training distribution.
fn expectation(tree: &Tree, i: usize, row: &[f64], known: u32) -> f64 {
    match &tree.nodes[i] {
        Node::Leaf { value, .. } => *value,
        Node::Split {
            feature,
            rule,
            default_left,
            left,
            right,
            ..
        } => {
            if known & (1 << feature) != 0 {
                let next = if goes_left(rule, row[*feature], *default_left) { *left } else { *right };
                expectation(tree, next, row, known)
            } else {
                let (cl, cr) = (tree.nodes[*left].cover(), tree.nodes[*right].cover());
                (cl * expectation(tree, *left, row, known) + cr * expectation(tree, *right, row, known)) / (cl + cr)
            }
        }
    }
}

fn shapley_oracle(forest: &Forest, row: &[f64]) -> (f64, Vec<f64>) {
    let n = row.len();
    let value: Vec<f64> = (0..1u32 << n)
        .map(|s| forest.base_score + forest.trees.iter().map(|t| expectation(t, 0, row, s)).sum::<f64>())
        .collect();
    let fact = |k: usize| (1..=k).map(|x| x as f64).product::<f64>();
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        for s in 0..1u32 << n {
            if s & (1 << i) == 0 {
                let k = s.count_ones() as usize;
                let w = fact(k) * fact(n - k - 1) / fact(n);
                *p += w * (value[(s | (1 << i)) as usize] - value[s as usize]);
            }
        }
    }
    (value[0], phi)
}

fn shap_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut rows_checked = 0;
    let mut dummies = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=8);
        let kinds: Vec<FeatureKind> = (0..n)
            .map(|_| if rng.random_bool(0.3) { FeatureKind::Categorical } else { FeatureKind::Numeric })
            .collect();
        // The last feature never appears in a split.
        let usable = n - 1;
        let trees = (0..rng.random_range(1..=6))
            .map(|_| {
                let depth = rng.random_range(1..=3);
                random_tree(&mut rng, &kinds, usable, depth)
            })
            .collect();
        let forest = Forest {
            base_score: rng.random_range(-3.0..0.0),
            trees,
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            feature_kinds: kinds.clone(),
        };
        for _ in 0..100 {
            let row: Vec<f64> = kinds
                .iter()
                .map(|k| match (rng.random_bool(0.1), k) {
                    (true, _) => f64::NAN,
                    (false, FeatureKind::Numeric) => rng.random_range(-1.5..1.5),
                    (false, FeatureKind::Categorical) => rng.random_range(0..6) as f64,
                })
                .collect();
            let a = tree_shap(&forest, &row, "row", "v").map_err(|e| e.to_string())?;
            let (base, phi) = shapley_oracle(&forest, &row);
            ensure!(close(a.base_value, base, 1e-9), "base {} vs {base}", a.base_value);
            for (i, (x, y)) in a.values.iter().zip(&phi).enumerate() {
                ensure!(close(*x, *y, 1e-9), "feature {i}: {x} vs oracle {y}");
            }
            let margin = forest.predict_margin(&row);
            ensure!(close(a.total(), margin, 1e-9), "local accuracy: {} vs {margin}", a.total());
            ensure!(a.values[n - 1] == 0.0, "dummy feature got {}", a.values[n - 1]);
            dummies += 1;
            rows_checked += 1;
        }
    }
    Ok(format!("{rows_checked} rows over 100 forests, {dummies} dummy features exactly 0"))
}

// Booster

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

fn gbdt_sanity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 3000;
    let cols: Vec<Vec<f64>> = (0..5)
        .map(|j| {
            (0..n)
                .map(|_| {
                    if j == 4 {
                        rng.random_range(0..6) as f64
                    } else if rng.random_bool(0.05) {
                        f64::NAN
                    } else {
                        rng.random_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect();
    let kinds = [
        FeatureKind::Numeric,
        FeatureKind::Numeric,
        FeatureKind::Numeric,
        FeatureKind::Numeric,
        FeatureKind::Categorical,
    ];
    let labels: Vec<u8> = (0..n)
        .map(|i| {
            let x0 = if cols[0][i].is_nan() { 0.0 } else { cols[0][i] };
            let z = -2.0 + 1.5 * x0 - cols[1][i].abs() + if cols[4][i] == 2.0 { 1.0 } else { 0.0 };
            u8::from(rng.random::<f64>() < 1.0 / (1.0 + (-z).exp()))
        })
        .collect();
    let weights: Vec<f64> = labels.iter().map(|&y| if y == 1 && rng.random_bool(0.3) { 5.0 } else { 1.0 }).collect();
    let hp = Hyperparams {
        n_trees: 120,
        min_weighted_samples_per_leaf: 20.0,
        ..Hyperparams::default()
    };
    let fit = |hp: &Hyperparams| fit_columns(&cols, &kinds, &names(5), &labels, &weights, hp).map_err(|e| e.to_string());
    let a = fit(&hp)?;
    ensure!(a.loss_history.len() == hp.n_trees + 1, "loss history has {} entries", a.loss_history.len());
    for (i, w) in a.loss_history.windows(2).enumerate() {
        ensure!(w[1] <= w[0], "loss rose at iteration {}: {} -> {}", i + 1, w[0], w[1]);
    }
    let b = fit(&hp)?;
    let model = |f: Forest| TrainedModel::new(f, "fp".into(), hp.clone(), None, false).to_json();
    ensure!(model(a.forest) == model(b.forest), "same-seed artifacts differ");

    // Separable by one cut.
    let x: Vec<f64> = (0..400).map(|i| (i as f64 - 200.0) / 37.0).collect();
    let y: Vec<u8> = x.iter().map(|v| u8::from(*v > 0.4)).collect();
    let stump = Hyperparams {
        n_trees: 1,
        max_depth: 1,
        learning_rate: 1.0,
        min_weighted_samples_per_leaf: 1.0,
        ..Hyperparams::default()
    };
    let s = fit_columns(&[x.clone()], &[FeatureKind::Numeric], &names(1), &y, &vec![1.0; 400], &stump)
        .map_err(|e| e.to_string())?;
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(v, l)| u8::from(s.forest.predict_probability(&[**v]) >= 0.5) == **l)
        .count();
    ensure!(correct == x.len(), "stump accuracy {correct}/{}", x.len());

    // No trees: the weighted prior.
    let zero = Hyperparams {
        n_trees: 0,
        ..Hyperparams::default()
    };
    let z = fit(&zero)?;
    let pos: f64 = labels.iter().zip(&weights).filter(|(l, _)| **l == 1).map(|(_, w)| w).sum();
    let prior = pos / weights.iter().sum::<f64>();
    let p = z.forest.predict_probability(&[0.0, 0.0, 0.0, 0.0, 1.0]);
    ensure!(close(p, prior, 1e-15), "zero-tree prediction {p} vs prior {prior}");
    ensure!(close(z.forest.base_score, (prior / (1.0 - prior)).ln(), 1e-12), "base margin is not the prior log-odds");
    Ok(format!(
        "loss {:.4} -> {:.4} over {} trees, stump exact, prior {prior:.6}",
        a.loss_history[0],
        a.loss_history[hp.n_trees],
        hp.n_trees
    ))
}

// AUC

fn pair_auc(scores: &[f64], labels: &[u8], weights: &[f64]) -> Option<f64> {
    let (mut num, mut pos, mut neg) = (0.0, 0.0, 0.0);
    for i in 0..scores.len() {
        if labels[i] == 1 {
            pos += weights[i];
        } else {
            neg += weights[i];
        }
    }
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                let credit = if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
                num += weights[i] * weights[j] * credit;
            }
        }
    }
    (pos > 0.0 && neg > 0.0).then(|| num / (pos * neg))
}

fn auc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tied = 0;
    for trial in 0..150 {
        let n = if trial < 5 { trial + 1 } else { rng.random_range(2..=1000) };
        let levels = [3u32, 10, 101, 100_000][trial % 4];
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let rate = rng.random_range(0.02..0.6);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(rate))).collect();
        let weights: Vec<f64> = if trial % 2 == 0 {
            vec![1.0; n]
        } else {
            labels.iter().map(|&y| if y == 1 && rng.random_bool(0.5) { 5.0 } else { 1.0 }).collect()
        };
        let got = auc(&scores, &labels, &weights).map_err(|e| e.to_string())?;
        let want = pair_auc(&scores, &labels, &weights);
        ensure!(got == want, "trial {trial} (n = {n}): {got:?} vs {want:?}");
        let as_u8: Vec<u8> = scores.iter().map(|s| (*s as u32 % 101) as u8).collect();
        let want = pair_auc(&as_u8.iter().map(|s| f64::from(*s)).collect::<Vec<_>>(), &labels, &weights);
        ensure!(auc(&as_u8, &labels, &weights).map_err(|e| e.to_string())? == want, "trial {trial} on u8 scores");
        if levels < 100 {
            tied += 1;
        }
    }
    Ok(format!("150 inputs up to n = 1000, {tied} with heavy ties, exact equality"))
}

// Threshold search

fn threshold_search_scan() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..200 {
        let n = rng.random_range(1..=400);
        let scores: Vec<u8> = (0..n).map(|_| rng.random_range(0..=100)).collect();
        let labels: Vec<u8> = scores
            .iter()
            .map(|&s| u8::from(rng.random_bool(0.02 + 0.5 * f64::from(s) / 100.0)))
            .collect();
        let weights: Vec<f64> = labels.iter().map(|&y| if y == 1 && rng.random_bool(0.3) { 5.0 } else { 1.0 }).collect();
        let beta = [2.0, 1.0][trial % 2];
        let s = threshold_search(&scores, &labels, &weights, beta, &default_grid()).map_err(|e| e.to_string())?;
        let mut best: Option<(u32, f64)> = None;
        for t in 0..=100u32 {
            let mut c = WeightedConfusion::default();
            for ((sc, y), w) in scores.iter().zip(&labels).zip(&weights) {
                match (*y == 1, u32::from(*sc) >= t) {
                    (true, true) => c.tp += w,
                    (false, true) => c.fp += w,
                    (true, false) => c.fn_ += w,
                    (false, false) => c.tn += w,
                }
            }
            let f = oracle_wf(&c, beta);
            ensure!(close(s.curve[t as usize].1, f, 1e-12), "trial {trial} t = {t}: curve {} vs {f}", s.curve[t as usize].1);
            if best.is_none_or(|(_, b)| f > b + 1e-12) {
                best = Some((t, f));
            }
        }
        let (t, f) = best.expect("grid non-empty");
        ensure!(s.best_threshold == t, "trial {trial}: search {} vs scan {t}", s.best_threshold);
        ensure!(close(s.best_wfbeta, f, 1e-12), "trial {trial}: best value");
    }

    // Flat curves: the smallest threshold of the plateau wins.
    let s = threshold_search(&[50; 10], &[1, 1, 1, 1, 1, 1, 1, 1, 1, 0], &[1.0; 10], 2.0, &default_grid())
        .map_err(|e| e.to_string())?;
    ensure!(s.best_threshold == 0, "flat plateau from 0 chose {}", s.best_threshold);
    let scores = [0, 0, 0, 60, 60];
    let s = threshold_search(&scores, &[0, 0, 0, 1, 1], &[1.0; 5], 2.0, &default_grid()).map_err(|e| e.to_string())?;
    ensure!(s.best_threshold == 1 && close(s.best_wfbeta, 1.0, 1e-15), "plateau 1..=60 chose {}", s.best_threshold);
    let s = threshold_search(&[7; 4], &[0; 4], &[1.0; 4], 2.0, &default_grid()).map_err(|e| e.to_string())?;
    let plateau = s.curve.iter().filter(|(_, f)| *f == s.best_wfbeta).map(|(t, _)| *t).min();
    ensure!(Some(s.best_threshold) == plateau, "single-class plateau chose {}", s.best_threshold);
    Ok("200 random inputs match the exhaustive scan; 3 plateau tie-breaks".into())
}

// Pipeline-scale checks on the default synthetic corpus

fn default_prep(synth: &SynthConfig) -> Result<changerisk::harness::Prepared, String> {
    let corpus = synth_generate(synth).map_err(|e| e.to_string())?;
    prepare(corpus, &PipelineConfig::default()).map_err(|e| e.to_string())
}

fn row(m: &FeatureMatrix, r: usize) -> Vec<f64> {
    m.values.iter().map(|c| c[r]).collect()
}

fn baseline_vs_model() -> Check {
    let cfg = PipelineConfig::default();
    let prep = default_prep(&SynthConfig::default())?;
    let rate = prep.linkage.positive_rate();
    ensure!((0.018..=0.030).contains(&rate), "positive rate {rate}");
    let run = run_pipeline(&prep, &RuleConfig::example(), &cfg.features, &cfg).map_err(|e| e.to_string())?;
    let (b, m) = (&run.baseline_report, &run.model_report);
    ensure!(
        m.weighted_recall >= b.weighted_recall + 0.10,
        "wR {:.4} vs baseline {:.4}",
        m.weighted_recall,
        b.weighted_recall
    );
    ensure!(m.weighted_fbeta >= b.weighted_fbeta, "wF2 {:.4} vs baseline {:.4}", m.weighted_fbeta, b.weighted_fbeta);
    ensure!(m.weighted_recall >= 0.85, "wR {:.4}", m.weighted_recall);
    let model_auc = m.auc.ok_or("no AUC")?;
    ensure!(model_auc >= 0.60, "AUC {model_auc:.4}");
    for w in run.fitted.loss_history.windows(2) {
        ensure!(w[1] <= w[0], "training loss rose");
    }
    let forest = &run.fitted.model.forest;
    let test = &run.test_rows.matrix;
    for r in 0..test.n_rows() {
        let x = row(test, r);
        let a = tree_shap(forest, &x, &test.row_ids[r], "").map_err(|e| e.to_string())?;
        let margin = forest.predict_margin(&x);
        ensure!(close(a.total(), margin, 1e-9), "local accuracy on {}: {} vs {margin}", test.row_ids[r], a.total());
    }
    Ok(format!(
        "positive rate {rate:.4}; baseline wR {:.3} wF2 {:.3} AUC {:.3}; model wR {:.3} wF2 {:.3} AUC {model_auc:.3} at threshold {}; {} test rows locally accurate",
        b.weighted_recall,
        b.weighted_fbeta,
        b.auc.unwrap_or(f64::NAN),
        m.weighted_recall,
        m.weighted_fbeta,
        m.threshold,
        test.n_rows()
    ))
}

fn team_ablation() -> Check {
    let cfg = PipelineConfig::default();
    let rules = RuleConfig::example();
    let planted = ablation_run(&default_prep(&SynthConfig::default())?, &rules, &cfg).map_err(|e| e.to_string())?;
    let gain = planted.fbeta_gain();
    ensure!(gain >= 0.0, "with planted team signal the gain is {gain:+.4}");
    let null_synth = SynthConfig {
        team_signal: 0.0,
        ..SynthConfig::default()
    };
    let null = ablation_run(&default_prep(&null_synth)?, &rules, &cfg).map_err(|e| e.to_string())?;
    let diff = null.fbeta_gain();
    ensure!(diff.abs() <= 0.03, "without team signal the arms differ by {diff:+.4}");
    Ok(format!("planted gain {gain:+.4}, null difference {diff:+.4}"))
}

fn backtest_stability() -> Check {
    let cfg = PipelineConfig::default();
    let prep = default_prep(&SynthConfig::default())?;
    let plan = WindowPlan::trailing(&prep, &cfg.backtest).map_err(|e| e.to_string())?;
    let run = sliding_window_run(&prep, &plan, &cfg.features, &cfg).map_err(|e| e.to_string())?;
    ensure!(run.windows.len() == 13, "{} windows", run.windows.len());
    for pair in run.windows.windows(2) {
        ensure!(pair[0].window.end == pair[1].window.start, "windows are not contiguous");
    }
    for w in &run.windows {
        ensure!((w.window.end - w.window.start).num_days() == 7, "window {:?} is not a week", w.window);
        ensure!(w.report.evaluated_rows > 0, "empty window {:?}", w.window);
        ensure!(w.train_cutoff <= w.window.start, "training cutoff after the window start");
    }
    ensure!(run.leakage_violations == 0, "{} leakage violations", run.leakage_violations);
    let std = run.summary.weighted_fbeta.std;
    ensure!(std < 0.05, "wF2 std {std:.4}");
    Ok(format!("13 weekly windows, wF2 mean {:.4} std {std:.4}, no leakage", run.summary.weighted_fbeta.mean))
}

// Service

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |v| Body::from(v.to_string())))
        .expect("request");
    let resp = app.clone().oneshot(req).await.expect("infallible");
    let status = resp.status();
    let bytes = resp.into_body().collect().await.expect("body").to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn to_values<T: serde::Serialize>(rows: &[T]) -> Vec<Value> {
    rows.iter().map(|r| serde_json::to_value(r).expect("serializes")).collect()
}

fn service_models() -> Result<(Corpus, Vec<(TrainedModel, FeatureSchema)>), String> {
    let corpus = synth_generate(&SynthConfig {
        n_changes: 3000,
        seed: 11,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let mut cfg = PipelineConfig::default();
    cfg.hyperparams.min_weighted_samples_per_leaf = 20.0;
    let prep = prepare(corpus.clone(), &cfg).map_err(|e| e.to_string())?;
    let mut models = Vec::new();
    for (team, trees) in [(false, 20), (true, 20), (false, 25)] {
        let mut features = cfg.features.clone();
        features.include_team_features = team;
        let mut cfg = cfg.clone();
        cfg.hyperparams.n_trees = trees;
        let run = run_pipeline(&prep, &RuleConfig::example(), &features, &cfg).map_err(|e| e.to_string())?;
        models.push((run.fitted.model, run.fitted.schema));
    }
    Ok((corpus, models))
}

fn service_config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        data_dir: dir.join("data"),
        static_dir: dir.join("static"),
        ..ServiceConfig::default()
    }
}

fn service_contract() -> Check {
    let (corpus, models) = service_models()?;
    let versions: Vec<String> = models.iter().map(|m| m.0.model_version.clone()).collect();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async {
        let state = AppState::open(service_config(dir.path())).map_err(|e| e.to_string())?;
        state
            .ingest(IngestRequest {
                changes: to_values(&corpus.changes),
                incidents: to_values(&corpus.incidents),
                releases: to_values(&corpus.releases),
            })
            .map_err(|e| e.to_string())?;
        for (m, s) in &models {
            state.register(m, s).map_err(|e| e.to_string())?;
        }
        let app = router(Arc::clone(&state));
        let (status, _) = call(&app, "POST", &format!("/v1/model/{}/activate", versions[0]), None).await;
        ensure!(status == StatusCode::OK, "activation returned {status}");

        // Read-only scoring.
        let data = dir.path().join("data");
        let before = store_digest(&data).map_err(|e| e.to_string())?;
        for i in 0..1000 {
            let (status, body) = if i % 2 == 0 {
                let c = &corpus.changes[(i * 7) % corpus.changes.len()];
                call(&app, "POST", "/v1/score", Some(serde_json::to_value(c).expect("serializes"))).await
            } else {
                let day = 1 + (i % 27);
                call(&app, "GET", &format!("/v1/queue?start=2023-12-{day:02}&end=2023-12-{:02}", day + 2), None).await
            };
            ensure!(status == StatusCode::OK, "request {i} returned {status}: {body}");
        }
        let after = store_digest(&data).map_err(|e| e.to_string())?;
        ensure!(before == after, "store digest changed after read traffic");

        // Durable feedback.
        let fb = json!({
            "change_id": corpus.changes[3].id,
            "verdict": "useful",
            "decision": "flag",
            "reviewer": "r1",
        });
        let (status, _) = call(&app, "POST", "/v1/feedback", Some(fb)).await;
        ensure!(status == StatusCode::CREATED, "feedback returned {status}");
        drop(app);
        drop(state);
        let state = AppState::open(service_config(dir.path())).map_err(|e| e.to_string())?;
        let app = router(Arc::clone(&state));
        let (_, listed) = call(&app, "GET", &format!("/v1/feedback?change_id={}", corpus.changes[3].id), None).await;
        ensure!(listed.as_array().is_some_and(|a| a.len() == 1), "feedback after restart: {listed}");
        ensure!(state.active_version().as_deref() == Some(versions[0].as_str()), "active model lost on restart");

        // Racing activations.
        let mut current = versions[0].clone();
        for round in 0..10 {
            let mut targets: Vec<String> = versions.iter().filter(|v| **v != current).cloned().collect();
            if round % 2 == 1 {
                targets.reverse();
            }
            let handles: Vec<_> = targets
                .into_iter()
                .map(|t| {
                    let app = app.clone();
                    let body = json!({"expected_active": current});
                    tokio::spawn(async move {
                        let r = call(&app, "POST", &format!("/v1/model/{t}/activate"), Some(body)).await;
                        (t, r.0)
                    })
                })
                .collect();
            let mut winners = Vec::new();
            let mut conflicts = 0;
            for h in handles {
                let (t, status) = h.await.map_err(|e| e.to_string())?;
                match status {
                    StatusCode::OK => winners.push(t),
                    StatusCode::CONFLICT => conflicts += 1,
                    other => return Err(format!("activation returned {other}")),
                }
            }
            ensure!(winners.len() == 1 && conflicts == 1, "round {round}: {} winners, {conflicts} conflicts", winners.len());
            current = winners.pop().expect("one winner");
            ensure!(state.active_version().as_deref() == Some(current.as_str()), "round {round}: wrong active model");
        }
        Ok("digest unchanged over 1000 reads, feedback survives restart, 10 activation races with one winner each".into())
    })
}
