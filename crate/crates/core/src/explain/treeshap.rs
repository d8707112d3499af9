//! Path-dependent TreeSHAP and an exponential-time Shapley reference.

use crate::gbdt::tree::{Direction, Node, Tree};

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    pweight: f64,
}

fn extend(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
    path[depth] = PathElement {
        feature,
        zero,
        one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d1 = (depth + 1) as f64;
    for i in (0..depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / d1;
        path[i].pweight = zero * path[i].pweight * (depth - i) as f64 / d1;
    }
}

fn unwind(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one;
    let zero = path[index].zero;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one * d1 / ((i + 1) as f64 * one);
            next_one = tmp - path[i].pweight * zero * (depth - i) as f64 / d1;
        } else {
            path[i].pweight = path[i].pweight * d1 / (zero * (depth - i) as f64);
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero = path[i + 1].zero;
        path[i].one = path[i + 1].one;
    }
}

fn unwound_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one;
    let zero = path[index].zero;
    let d1 = (depth + 1) as f64;
    let mut next_one = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one * d1 / ((i + 1) as f64 * one);
            total += tmp;
            next_one = path[i].pweight - tmp * zero * (depth - i) as f64 / d1;
        } else {
            total += path[i].pweight / zero / ((depth - i) as f64 / d1);
        }
    }
    total
}

struct Walker<'a> {
    tree: &'a Tree,
    row: &'a [f64],
    phi: &'a mut [f64],
}

impl Walker<'_> {
    fn recurse(&mut self, node: usize, parent: &[PathElement], depth: usize, zero: f64, one: f64, feature: Option<usize>) {
        let mut path = vec![PathElement::default(); depth + 1];
        path[..depth].copy_from_slice(&parent[..depth]);
        extend(&mut path, depth, zero, one, feature);

        match &self.tree.nodes[node] {
            Node::Leaf { value, .. } => {
                for i in 1..=depth {
                    let w = unwound_sum(&path, depth, i);
                    let el = path[i];
                    if let Some(f) = el.feature {
                        self.phi[f] += w * (el.one - el.zero) * value;
                    }
                }
            }
            Node::Split {
                feature: f,
                rule,
                default_left,
                left,
                right,
                cover,
                ..
            } => {
                let (hot, cold) = match rule.direction(self.row[*f], *default_left) {
                    Direction::Left => (*left, *right),
                    Direction::Right => (*right, *left),
                };
                let hot_fraction = self.tree.nodes[hot].cover() / cover;
                let cold_fraction = self.tree.nodes[cold].cover() / cover;
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                let mut depth = depth;
                if let Some(k) = (1..=depth).find(|&k| path[k].feature == Some(*f)) {
                    in_zero = path[k].zero;
                    in_one = path[k].one;
                    unwind(&mut path, depth, k);
                    depth -= 1;
                }
                let f = Some(*f);
                self.recurse(hot, &path, depth + 1, hot_fraction * in_zero, in_one, f);
                self.recurse(cold, &path, depth + 1, cold_fraction * in_zero, 0.0, f);
            }
        }
    }
}

/// Adds one tree's attributions for `row` into `phi`.
pub fn tree_shap_into(tree: &Tree, row: &[f64], phi: &mut [f64]) {
    let mut walker = Walker { tree, row, phi };
    walker.recurse(0, &[], 0, 1.0, 1.0, None);
}

/// Expected tree output when only the features in `known` are observed;
/// unobserved splits average their children by cover.
pub fn conditional_expectation(tree: &Tree, row: &[f64], known: &[bool]) -> f64 {
    fn walk(t: &Tree, i: usize, row: &[f64], known: &[bool]) -> f64 {
        match &t.nodes[i] {
            Node::Leaf { value, .. } => *value,
            Node::Split {
                feature,
                rule,
                default_left,
                left,
                right,
                cover,
                ..
            } => {
                if known[*feature] {
                    match rule.direction(row[*feature], *default_left) {
                        Direction::Left => walk(t, *left, row, known),
                        Direction::Right => walk(t, *right, row, known),
                    }
                } else {
                    let (l, r) = (&t.nodes[*left], &t.nodes[*right]);
                    (l.cover() * walk(t, *left, row, known) + r.cover() * walk(t, *right, row, known)) / cover
                }
            }
        }
    }
    walk(tree, 0, row, known)
}

/// Shapley values by enumerating every coalition of `n_features` players.
pub fn bruteforce_shapley(trees: &[Tree], row: &[f64], n_features: usize) -> Vec<f64> {
    let m = n_features;
    let mut factorial = vec![1.0f64; m + 1];
    for i in 1..=m {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    let value = |mask: u32| -> f64 {
        let known: Vec<bool> = (0..m).map(|j| mask & (1 << j) != 0).collect();
        trees.iter().map(|t| conditional_expectation(t, row, &known)).sum()
    };
    let values: Vec<f64> = (0..1u32 << m).map(value).collect();
    let mut phi = vec![0.0; m];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..1u32 << m {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = factorial[s] * factorial[m - s - 1] / factorial[m];
            *p += weight * (values[(mask | bit) as usize] - values[mask as usize]);
        }
    }
    phi
}
