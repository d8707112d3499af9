//! Leaf-wise growth of one regression tree on gradient/hessian histograms.

use std::ops::{AddAssign, SubAssign};

use super::binning::{BinMapper, BinnedMatrix};
use super::tree::{Node, SplitRule, Tree};
use super::Hyperparams;

const MIN_GAIN: f64 = 1e-12;
const MIN_HESSIAN: f64 = 1e-12;
/// Added to the hessian when ordering categories, damping rare ones.
const CATEGORY_SMOOTHING: f64 = 10.0;
/// Extra l2 applied to categorical split gains.
const CATEGORY_L2: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Stats {
    g: f64,
    h: f64,
    w: f64,
}

impl AddAssign for Stats {
    fn add_assign(&mut self, o: Self) {
        self.g += o.g;
        self.h += o.h;
        self.w += o.w;
    }
}

impl SubAssign for Stats {
    fn sub_assign(&mut self, o: Self) {
        self.g -= o.g;
        self.h -= o.h;
        self.w -= o.w;
    }
}

impl std::ops::Sub for Stats {
    type Output = Stats;
    fn sub(mut self, o: Self) -> Stats {
        self -= o;
        self
    }
}

/// Flat histogram over all features; feature `f` occupies
/// `offsets[f]..offsets[f + 1]`, the last slot being the missing bin.
struct Histogram(Vec<Stats>);

#[derive(Debug, Clone)]
enum BinSplit {
    /// Bins `0..=bin` go left.
    Numeric(u16),
    /// Per-bin membership of the left side.
    Categorical(Vec<bool>),
}

#[derive(Debug, Clone)]
struct Candidate {
    feature: usize,
    split: BinSplit,
    default_left: bool,
    gain: f64,
}

struct OpenLeaf {
    node: usize,
    depth: usize,
    rows: Vec<u32>,
    hist: Histogram,
    best: Option<Candidate>,
}

pub struct Grown {
    /// Unscaled Newton leaf values; `leaf_of_row[r]` indexes `tree.nodes`.
    pub tree: Tree,
    pub leaf_rows: Vec<(usize, Vec<u32>)>,
}

pub struct Grower<'a> {
    data: &'a BinnedMatrix,
    hp: &'a Hyperparams,
    offsets: Vec<usize>,
    /// Per-row (g, h, w), packed for histogram passes.
    rows: Vec<Stats>,
}

fn score(s: Stats, l2: f64) -> f64 {
    s.g * s.g / (s.h + l2)
}

impl<'a> Grower<'a> {
    pub fn new(data: &'a BinnedMatrix, hp: &'a Hyperparams, g: &'a [f64], h: &'a [f64], w: &'a [f64]) -> Self {
        let mut offsets = vec![0];
        for m in &data.mappers {
            offsets.push(offsets.last().unwrap() + m.n_value_bins() + 1);
        }
        let rows = (0..g.len()).map(|r| Stats { g: g[r], h: h[r], w: w[r] }).collect();
        Self { data, hp, offsets, rows }
    }

    fn build_hist(&self, rows: &[u32]) -> Histogram {
        let mut hist = vec![Stats::default(); *self.offsets.last().unwrap()];
        for (f, bins) in self.data.bins.iter().enumerate() {
            let slot = &mut hist[self.offsets[f]..self.offsets[f + 1]];
            for &r in rows {
                let r = r as usize;
                slot[bins[r] as usize] += self.rows[r];
            }
        }
        Histogram(hist)
    }

    fn totals(&self, rows: &[u32]) -> Stats {
        let mut t = Stats::default();
        for &r in rows {
            let r = r as usize;
            t += self.rows[r];
        }
        t
    }

    fn admissible(&self, s: Stats) -> bool {
        s.w >= self.hp.min_weighted_samples_per_leaf && s.h + self.hp.l2_leaf_regularization > MIN_HESSIAN
    }

    /// Gain of `left | rest` with the missing mass sent to either side.
    /// Returns the better (gain, default_left).
    fn evaluate(&self, left: Stats, right: Stats, missing: Stats, parent: f64, l2: f64) -> Option<(f64, bool)> {
        let mut best: Option<(f64, bool)> = None;
        let options: &[bool] = if missing.w > 0.0 || missing.h > 0.0 {
            &[true, false]
        } else {
            // Nothing to route; default follows the heavier child.
            if left.w >= right.w {
                &[true]
            } else {
                &[false]
            }
        };
        for &missing_left in options {
            let (mut l, mut r) = (left, right);
            if missing_left {
                l += missing;
            } else {
                r += missing;
            }
            if !self.admissible(l) || !self.admissible(r) {
                continue;
            }
            let gain = score(l, l2) + score(r, l2) - parent;
            if best.map_or(true, |(b, _)| gain > b) {
                best = Some((gain, missing_left));
            }
        }
        best
    }

    fn best_split(&self, hist: &Histogram, total: Stats) -> Option<Candidate> {
        let l2 = self.hp.l2_leaf_regularization;
        let parent = score(total, l2);
        let mut best: Option<Candidate> = None;
        let mut consider = |c: Candidate| {
            if c.gain > MIN_GAIN && best.as_ref().map_or(true, |b| c.gain > b.gain) {
                best = Some(c);
            }
        };
        for (f, mapper) in self.data.mappers.iter().enumerate() {
            let slot = &hist.0[self.offsets[f]..self.offsets[f + 1]];
            let (values, missing) = slot.split_at(slot.len() - 1);
            let missing = missing[0];
            let mut present = Stats::default();
            for s in values {
                present += *s;
            }
            match mapper {
                BinMapper::Numeric { .. } => {
                    let mut left = Stats::default();
                    for (i, s) in values.iter().enumerate().take(values.len().saturating_sub(1)) {
                        left += *s;
                        if s.w == 0.0 && s.h == 0.0 && s.g == 0.0 {
                            continue;
                        }
                        if let Some((gain, default_left)) = self.evaluate(left, present - left, missing, parent, l2) {
                            consider(Candidate {
                                feature: f,
                                split: BinSplit::Numeric(i as u16),
                                default_left,
                                gain,
                            });
                        }
                    }
                }
                BinMapper::Categorical { .. } => {
                    // Categories lighter than a leaf never enter a split subset.
                    let min_mass = self.hp.min_weighted_samples_per_leaf.max(f64::MIN_POSITIVE);
                    let mut occupied: Vec<usize> =
                        (0..values.len()).filter(|&i| values[i].w >= min_mass).collect();
                    if occupied.len() < 2 {
                        continue;
                    }
                    let cat_l2 = l2 + CATEGORY_L2;
                    let cat_parent = score(total, cat_l2);
                    let ratio = |i: usize| values[i].g / (values[i].h + CATEGORY_SMOOTHING);
                    occupied.sort_by(|&a, &b| ratio(a).total_cmp(&ratio(b)).then(a.cmp(&b)));
                    let cap = self.hp.max_categories_per_split.min(occupied.len() - 1);
                    for from_end in [false, true] {
                        let mut left = Stats::default();
                        let mut members = vec![false; values.len()];
                        for j in 0..cap {
                            let bin = if from_end {
                                occupied[occupied.len() - 1 - j]
                            } else {
                                occupied[j]
                            };
                            left += values[bin];
                            members[bin] = true;
                            if let Some((gain, default_left)) =
                                self.evaluate(left, present - left, missing, cat_parent, cat_l2)
                            {
                                consider(Candidate {
                                    feature: f,
                                    split: BinSplit::Categorical(members.clone()),
                                    default_left,
                                    gain,
                                });
                            }
                        }
                    }
                }
            }
        }
        best
    }

    fn goes_left(&self, c: &Candidate, r: usize) -> bool {
        let bin = self.data.bins[c.feature][r];
        if bin == self.data.mappers[c.feature].missing_bin() {
            return c.default_left;
        }
        match &c.split {
            BinSplit::Numeric(b) => bin <= *b,
            BinSplit::Categorical(members) => members[bin as usize],
        }
    }

    fn rule(&self, c: &Candidate) -> SplitRule {
        match (&c.split, &self.data.mappers[c.feature]) {
            (BinSplit::Numeric(b), BinMapper::Numeric { thresholds }) => SplitRule::Numeric {
                threshold: thresholds[*b as usize],
            },
            (BinSplit::Categorical(members), BinMapper::Categorical { codes }) => SplitRule::Categorical {
                left_categories: codes
                    .iter()
                    .zip(members)
                    .filter(|(_, m)| **m)
                    .map(|(c, _)| *c)
                    .collect(),
            },
            _ => unreachable!("split kind matches mapper kind"),
        }
    }

    fn open(&self, node: usize, depth: usize, rows: Vec<u32>, hist: Histogram) -> OpenLeaf {
        let best = if depth < self.hp.max_depth {
            self.best_split(&hist, self.totals(&rows))
        } else {
            None
        };
        OpenLeaf {
            node,
            depth,
            rows,
            hist,
            best,
        }
    }

    pub fn grow(&self, rows: Vec<u32>) -> Grown {
        let l2 = self.hp.l2_leaf_regularization;
        let mut nodes = vec![Node::Leaf { value: 0.0, cover: 0.0 }];
        let hist = self.build_hist(&rows);
        let mut open = vec![self.open(0, 0, rows, hist)];
        let mut closed: Vec<OpenLeaf> = Vec::new();

        while open.len() + closed.len() < self.hp.max_leaves.max(1) {
            // Highest gain first; lowest node id on ties.
            let pick = open
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.as_ref().map(|b| (i, b.gain, l.node)))
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.2.cmp(&a.2)));
            let Some((i, _, _)) = pick else { break };
            let leaf = open.swap_remove(i);
            let cand = leaf.best.clone().expect("picked leaf has a split");
            let (left_rows, right_rows): (Vec<u32>, Vec<u32>) =
                leaf.rows.iter().partition(|&&r| self.goes_left(&cand, r as usize));

            let (small, large_is_left) = if left_rows.len() <= right_rows.len() {
                (&left_rows, false)
            } else {
                (&right_rows, true)
            };
            let small_hist = self.build_hist(small);
            let mut large_hist = leaf.hist;
            for (a, b) in large_hist.0.iter_mut().zip(&small_hist.0) {
                *a -= *b;
            }
            let (left_hist, right_hist) = if large_is_left {
                (large_hist, small_hist)
            } else {
                (small_hist, large_hist)
            };

            let left_id = nodes.len();
            let right_id = left_id + 1;
            nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
            nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
            nodes[leaf.node] = Node::Split {
                feature: cand.feature,
                rule: self.rule(&cand),
                default_left: cand.default_left,
                left: left_id,
                right: right_id,
                gain: cand.gain,
                cover: 0.0,
            };
            open.push(self.open(left_id, leaf.depth + 1, left_rows, left_hist));
            open.push(self.open(right_id, leaf.depth + 1, right_rows, right_hist));
            // Leaves that cannot split are parked so they do not rescan.
            let (keep, done): (Vec<_>, Vec<_>) = open.into_iter().partition(|l| l.best.is_some());
            open = keep;
            closed.extend(done);
        }

        let mut leaf_rows = Vec::with_capacity(open.len() + closed.len());
        for leaf in open.into_iter().chain(closed) {
            let t = self.totals(&leaf.rows);
            nodes[leaf.node] = Node::Leaf {
                value: -t.g / (t.h + l2),
                cover: t.w,
            };
            leaf_rows.push((leaf.node, leaf.rows));
        }
        leaf_rows.sort_by_key(|(n, _)| *n);
        fill_split_covers(&mut nodes, 0);
        Grown {
            tree: Tree { nodes },
            leaf_rows,
        }
    }
}

fn fill_split_covers(nodes: &mut [Node], i: usize) -> f64 {
    match nodes[i] {
        Node::Leaf { cover, .. } => cover,
        Node::Split { left, right, .. } => {
            let c = fill_split_covers(nodes, left) + fill_split_covers(nodes, right);
            if let Node::Split { cover, .. } = &mut nodes[i] {
                *cover = c;
            }
            c
        }
    }
}

