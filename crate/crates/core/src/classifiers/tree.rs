//! CART trees and random forests.
//!
//! Splits are `x[feature] <= threshold` with thresholds at midpoints between
//! consecutive distinct values. Candidates are scanned by ascending feature
//! index then ascending threshold; a later candidate replaces the incumbent
//! only if it is better by more than a relative 1e-12. The same builder serves
//! the boosted models through a Newton criterion.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, derive_seed, HyperReader};
use crate::error::Result;

/// Hessian floor for Newton leaves and gains.
pub const HESSIAN_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf { value: Vec<f64> },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeParams {
    /// `None` grows until nodes are pure or too small.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

impl TreeParams {
    pub(crate) fn read(r: &mut HyperReader) -> Result<Self> {
        let depth = r.int("max_depth", 0)?;
        Ok(TreeParams {
            max_depth: (depth > 0).then_some(depth),
            min_samples_split: r.int("min_samples_split", 2)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    pub tree: TreeParams,
    /// Fraction of features tried at each node.
    pub max_features: f64,
    pub bootstrap: bool,
}

impl ForestParams {
    pub(crate) fn read(r: &mut HyperReader) -> Result<Self> {
        Ok(ForestParams {
            n_trees: r.int("n_trees", 1)?,
            tree: TreeParams::read(r)?,
            max_features: r.float("max_features", f64::MIN_POSITIVE, 1.0)?,
            bootstrap: r.boolean("bootstrap")?,
        })
    }
}

/// Node statistics for split scoring. `score` is additive over children and
/// larger is better, so the gain of a split is `score(L) + score(R) - score(parent)`.
pub(crate) trait Criterion {
    type Stats: Clone;
    fn empty(&self) -> Self::Stats;
    fn add(&self, s: &mut Self::Stats, i: usize);
    fn sub(&self, s: &mut Self::Stats, i: usize);
    fn score(&self, s: &Self::Stats) -> f64;
    fn is_pure(&self, s: &Self::Stats) -> bool;
    fn leaf(&self, s: &Self::Stats) -> Vec<f64>;
}

/// Weighted Gini: minimizing Σ n_child·gini_child is maximizing Σ_child Σ_c w_c² / n_child.
pub(crate) struct Gini<'a> {
    pub y: &'a [usize],
    pub w: &'a [f64],
    pub n_classes: usize,
}

#[derive(Clone)]
pub(crate) struct ClassCounts {
    counts: Vec<f64>,
    total: f64,
}

impl Criterion for Gini<'_> {
    type Stats = ClassCounts;

    fn empty(&self) -> ClassCounts {
        ClassCounts {
            counts: vec![0.0; self.n_classes],
            total: 0.0,
        }
    }

    fn add(&self, s: &mut ClassCounts, i: usize) {
        s.counts[self.y[i]] += self.w[i];
        s.total += self.w[i];
    }

    fn sub(&self, s: &mut ClassCounts, i: usize) {
        s.counts[self.y[i]] -= self.w[i];
        s.total -= self.w[i];
    }

    fn score(&self, s: &ClassCounts) -> f64 {
        if s.total <= 0.0 {
            0.0
        } else {
            s.counts.iter().map(|c| c * c).sum::<f64>() / s.total
        }
    }

    fn is_pure(&self, s: &ClassCounts) -> bool {
        s.counts.iter().filter(|&&c| c > 0.0).count() <= 1
    }

    fn leaf(&self, s: &ClassCounts) -> Vec<f64> {
        s.counts.iter().map(|c| c / s.total).collect()
    }
}

/// Second-order criterion for boosting: gain G²/H, leaf value G/H, with the
/// per-sample hessian already floored by the caller.
pub(crate) struct Newton<'a> {
    pub g: &'a [f64],
    pub h: &'a [f64],
}

#[derive(Clone)]
pub(crate) struct GradStats {
    g: f64,
    h: f64,
}

impl Criterion for Newton<'_> {
    type Stats = GradStats;

    fn empty(&self) -> GradStats {
        GradStats { g: 0.0, h: 0.0 }
    }

    fn add(&self, s: &mut GradStats, i: usize) {
        s.g += self.g[i];
        s.h += self.h[i];
    }

    fn sub(&self, s: &mut GradStats, i: usize) {
        s.g -= self.g[i];
        s.h -= self.h[i];
    }

    fn score(&self, s: &GradStats) -> f64 {
        s.g * s.g / s.h.max(HESSIAN_FLOOR)
    }

    fn is_pure(&self, _: &GradStats) -> bool {
        false
    }

    fn leaf(&self, s: &GradStats) -> Vec<f64> {
        vec![s.g / s.h.max(HESSIAN_FLOOR)]
    }
}

pub(crate) struct Grower<'a> {
    /// Features as rows, `[dim x n]`.
    pub xt: ArrayView2<'a, f64>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Number of features drawn per node; `None` uses all, in ascending order.
    pub features_per_node: Option<usize>,
    /// Row order of every feature over all rows of `xt`, from [`presort`].
    /// Used when every node scans all features: per-node sorts become stable partitions.
    pub presorted: Option<&'a [Vec<u32>]>,
}

/// Rows `0..n` ordered by each feature's value.
pub fn presort(xt: ArrayView2<f64>) -> Vec<Vec<u32>> {
    xt.rows()
        .into_iter()
        .map(|col| {
            let mut order: Vec<u32> = (0..col.len() as u32).collect();
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            order
        })
        .collect()
}

type Pending = (usize, Vec<usize>, usize, Option<Vec<Vec<u32>>>);

impl Grower<'_> {
    pub fn grow<C: Criterion>(&self, crit: &C, samples: Vec<usize>, rng: &mut ChaCha8Rng) -> Tree {
        let (dim, n) = self.xt.dim();
        let subsampled = self.features_per_node.is_some_and(|m| m < dim);
        let mut in_node = vec![false; n];
        let root_orders = match self.presorted {
            Some(orders) if !subsampled => {
                samples.iter().for_each(|&i| in_node[i] = true);
                let lists = orders
                    .iter()
                    .map(|o| o.iter().copied().filter(|&i| in_node[i as usize]).collect())
                    .collect();
                in_node.fill(false);
                Some(lists)
            }
            _ => None,
        };
        let mut nodes = vec![Node::Leaf { value: Vec::new() }];
        let mut stack: Vec<Pending> = vec![(0, samples, 0, root_orders)];
        let mut buf: Vec<u32> = Vec::new();
        let all_features: Vec<usize> = (0..dim).collect();
        while let Some((id, idx, depth, orders)) = stack.pop() {
            let mut stats = crit.empty();
            idx.iter().for_each(|&i| crit.add(&mut stats, i));
            let can_split = idx.len() >= self.min_samples_split
                && self.max_depth.is_none_or(|d| depth < d)
                && !crit.is_pure(&stats);
            let split = match (&orders, can_split) {
                (_, false) => None,
                (Some(lists), true) => best_split(crit, self.xt, &stats, lists.iter().enumerate().map(|(f, l)| (f, l.as_slice()))),
                (None, true) => {
                    let features = match self.features_per_node {
                        Some(m) if m < dim => {
                            let mut f = sample(rng, dim, m).into_vec();
                            f.sort_unstable();
                            f
                        }
                        _ => all_features.clone(),
                    };
                    let mut sorted = Vec::with_capacity(features.len());
                    for &f in &features {
                        let col = self.xt.row(f);
                        buf.clear();
                        buf.extend(idx.iter().map(|&i| i as u32));
                        buf.sort_unstable_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                        sorted.push((f, buf.clone()));
                    }
                    best_split(crit, self.xt, &stats, sorted.iter().map(|(f, l)| (*f, l.as_slice())))
                }
            };
            match split {
                None => nodes[id] = Node::Leaf { value: crit.leaf(&stats) },
                Some((feature, threshold)) => {
                    let col = self.xt.row(feature);
                    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| col[i] <= threshold);
                    let (lo, ro) = match orders {
                        Some(lists) => {
                            l.iter().for_each(|&i| in_node[i] = true);
                            let (a, b): (Vec<Vec<u32>>, Vec<Vec<u32>>) = lists
                                .into_iter()
                                .map(|list| list.into_iter().partition(|&i| in_node[i as usize]))
                                .unzip();
                            l.iter().for_each(|&i| in_node[i] = false);
                            (Some(a), Some(b))
                        }
                        None => (None, None),
                    };
                    let (left, right) = (nodes.len(), nodes.len() + 1);
                    nodes.push(Node::Leaf { value: Vec::new() });
                    nodes.push(Node::Leaf { value: Vec::new() });
                    nodes[id] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1, ro));
                    stack.push((left, l, depth + 1, lo));
                }
            }
        }
        Tree { nodes }
    }
}

/// Best split over `(feature, node rows sorted by that feature)` candidates, in the given order.
fn best_split<'s, C: Criterion>(
    crit: &C,
    xt: ArrayView2<f64>,
    parent: &C::Stats,
    candidates: impl Iterator<Item = (usize, &'s [u32])>,
) -> Option<(usize, f64)> {
    let parent_score = crit.score(parent);
    let tol = 1e-12 * parent_score.abs().max(1.0);
    let mut best: Option<(usize, f64)> = None;
    let mut best_gain = 0.0;
    for (f, order) in candidates {
        let col = xt.row(f);
        let value = |j: usize| col[order[j] as usize];
        if order.len() < 2 || value(0) == value(order.len() - 1) {
            continue;
        }
        let mut left = crit.empty();
        let mut right = parent.clone();
        for pair in order.windows(2) {
            let i = pair[0] as usize;
            crit.add(&mut left, i);
            crit.sub(&mut right, i);
            let (a, b) = (col[i], col[pair[1] as usize]);
            if a < b {
                let gain = crit.score(&left) + crit.score(&right) - parent_score;
                if gain > best_gain + tol {
                    best_gain = gain;
                    best = Some((f, midpoint(a, b)));
                }
            }
        }
    }
    best
}

/// A threshold t with a <= t < b.
fn midpoint(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t < b {
        t
    } else {
        a
    }
}

impl Tree {
    pub fn leaf_value(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, id: usize) -> usize {
            match &t.nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    pub fn fit_classifier(p: &TreeParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Tree {
        let w = vec![1.0; y.len()];
        let xt = x.t().as_standard_layout().into_owned();
        let grower = Grower {
            xt: xt.view(),
            max_depth: p.max_depth,
            min_samples_split: p.min_samples_split,
            features_per_node: None,
            presorted: Some(&presort(xt.view())),
        };
        let crit = Gini { y, w: &w, n_classes };
        grower.grow(&crit, (0..y.len()).collect(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Leaf class frequencies.
    pub fn scores(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n_classes = self.leaf_value(x.row(0)).len();
        let mut out = Array2::zeros((x.nrows(), n_classes));
        for (r, row) in x.rows().into_iter().enumerate() {
            out.row_mut(r).assign(&ArrayView1::from(self.leaf_value(row)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub n_classes: usize,
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(p: &ForestParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Forest {
        let n = y.len();
        let dim = x.ncols();
        let xt = x.t().as_standard_layout().into_owned();
        let m = ((p.max_features * dim as f64).round() as usize).clamp(1, dim);
        let orders = (m == dim).then(|| presort(xt.view()));
        let grower = Grower {
            xt: xt.view(),
            max_depth: p.tree.max_depth,
            min_samples_split: p.tree.min_samples_split,
            features_per_node: (m < dim).then_some(m),
            presorted: orders.as_deref(),
        };
        let trees = (0..p.n_trees)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
                let mut w = vec![0.0; n];
                if p.bootstrap {
                    for _ in 0..n {
                        w[rng.random_range(0..n)] += 1.0;
                    }
                } else {
                    w.fill(1.0);
                }
                let samples: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
                let crit = Gini { y, w: &w, n_classes };
                grower.grow(&crit, samples, &mut rng)
            })
            .collect();
        Forest { n_classes, trees }
    }

    /// Fraction of trees voting for each class.
    pub fn scores(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        let share = 1.0 / self.trees.len() as f64;
        for (r, row) in x.rows().into_iter().enumerate() {
            for t in &self.trees {
                out[[r, argmax(ArrayView1::from(t.leaf_value(row)))]] += share;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{ModelSpec, Family, HyperValue, Parameters};
    use ndarray::arr2;
    use proptest::prelude::*;
    use rand::Rng;

    fn params(depth: Option<usize>) -> TreeParams {
        TreeParams {
            max_depth: depth,
            min_samples_split: 2,
        }
    }

    #[test]
    fn one_dimensional_threshold() {
        let x = arr2(&[[-2.0], [-1.0], [-0.5], [0.0], [0.5], [3.0]]);
        let y = [0, 0, 0, 1, 1, 1];
        let t = Tree::fit_classifier(&params(None), x.view(), &y, 2);
        assert_eq!(t.nodes.len(), 3);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, -0.25);
            }
            other => panic!("{other:?}"),
        }
        let pred: Vec<usize> = t.scores(x.view()).rows().into_iter().map(argmax).collect();
        assert_eq!(pred, y);
    }

    #[test]
    fn pure_node_is_a_leaf() {
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let t = Tree::fit_classifier(&params(None), x.view(), &[1, 1], 2);
        assert_eq!(t.nodes, vec![Node::Leaf { value: vec![0.0, 1.0] }]);
    }

    /// Exhaustive weighted-Gini scan written from the definition.
    fn brute_force_split(x: &Array2<f64>, y: &[usize], n_classes: usize) -> Option<(usize, f64)> {
        let gini = |rows: &[usize]| -> f64 {
            if rows.is_empty() {
                return 0.0;
            }
            let n = rows.len() as f64;
            let mut c = vec![0.0; n_classes];
            rows.iter().for_each(|&i| c[y[i]] += 1.0);
            1.0 - c.iter().map(|v| (v / n) * (v / n)).sum::<f64>()
        };
        let all: Vec<usize> = (0..y.len()).collect();
        let parent = gini(&all) * y.len() as f64;
        let mut best: Option<(usize, f64, f64)> = None;
        for f in 0..x.ncols() {
            let mut vals: Vec<f64> = x.column(f).to_vec();
            vals.sort_by(f64::total_cmp);
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let l: Vec<usize> = all.iter().cloned().filter(|&i| x[[i, f]] <= t).collect();
                let r: Vec<usize> = all.iter().cloned().filter(|&i| x[[i, f]] > t).collect();
                let imp = gini(&l) * l.len() as f64 + gini(&r) * r.len() as f64;
                let better = match best {
                    None => imp < parent - 1e-12,
                    Some((_, _, b)) => imp < b - 1e-12,
                };
                if better {
                    best = Some((f, t, imp));
                }
            }
        }
        best.map(|(f, t, _)| (f, t))
    }

    proptest! {
        #[test]
        fn root_split_matches_brute_force(
            vals in proptest::collection::vec(0u8..6, 10 * 3),
            labels in proptest::collection::vec(0usize..3, 10),
        ) {
            let x = Array2::from_shape_fn((10, 3), |(i, j)| vals[i * 3 + j] as f64 / 5.0);
            let t = Tree::fit_classifier(&params(Some(1)), x.view(), &labels, 3);
            let got = match &t.nodes[0] {
                Node::Split { feature, threshold, .. } => Some((*feature, *threshold)),
                Node::Leaf { .. } => None,
            };
            match (got, brute_force_split(&x, &labels, 3)) {
                (Some((f, t)), Some((g, u))) => {
                    prop_assert_eq!(f, g);
                    prop_assert!((t - u).abs() < 1e-12);
                }
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn unlimited_tree_fits_distinct_points(
            vals in proptest::collection::vec(-1e3f64..1e3, 12 * 2),
            labels in proptest::collection::vec(0usize..4, 12),
        ) {
            let x = Array2::from_shape_vec((12, 2), vals).unwrap();
            let distinct = (0..12).all(|i| (0..i).all(|j| x.row(i) != x.row(j)));
            prop_assume!(distinct);
            let t = Tree::fit_classifier(&params(None), x.view(), &labels, 4);
            let pred: Vec<usize> = t.scores(x.view()).rows().into_iter().map(argmax).collect();
            prop_assert_eq!(pred, labels);
        }
    }

    fn probe_data() -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((60, 6), |_| rng.random::<f64>());
        let y = x.rows().into_iter().map(|r| ((r[0] + r[3]) * 1.5) as usize).collect();
        (x, y)
    }

    #[test]
    fn single_tree_forest_equals_tree() {
        let (x, y) = probe_data();
        let tree = Tree::fit_classifier(&params(None), x.view(), &y, 3);
        let fp = ForestParams {
            n_trees: 1,
            tree: params(None),
            max_features: 1.0,
            bootstrap: false,
        };
        let forest = Forest::fit(&fp, x.view(), &y, 3, 99);
        assert_eq!(forest.trees[0], tree);
        let probe = Array2::from_shape_fn((25, 6), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 10.0);
        let a: Vec<usize> = tree.scores(probe.view()).rows().into_iter().map(argmax).collect();
        let b: Vec<usize> = forest.scores(probe.view()).rows().into_iter().map(argmax).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_is_seed_deterministic() {
        let (x, y) = probe_data();
        let spec = ModelSpec::default_for(Family::RandomForest, 3).with("max_features", HyperValue::Float(0.5));
        let a = Parameters::fit(&spec, x.view(), &y, 3).unwrap();
        let b = Parameters::fit(&spec, x.view(), &y, 3).unwrap();
        assert_eq!(a, b);
        let c = Parameters::fit(&ModelSpec { seed: 4, ..spec }, x.view(), &y, 3).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn forest_vote_majority() {
        let leaf = |v: Vec<f64>| Tree {
            nodes: vec![Node::Leaf { value: v }],
        };
        let f = Forest {
            n_classes: 2,
            trees: vec![leaf(vec![1.0, 0.0]), leaf(vec![0.9, 0.1]), leaf(vec![0.0, 1.0])],
        };
        let s = f.scores(arr2(&[[0.0]]).view());
        assert_eq!(argmax(s.row(0)), 0);
        assert!((s[[0, 0]] - 2.0 / 3.0).abs() < 1e-12);
        let tie = Forest {
            n_classes: 2,
            trees: vec![leaf(vec![0.0, 1.0]), leaf(vec![1.0, 0.0])],
        };
        assert_eq!(argmax(tie.scores(arr2(&[[0.0]]).view()).row(0)), 0);
    }

    #[test]
    fn depth_limit_holds() {
        let (x, y) = probe_data();
        let t = Tree::fit_classifier(&params(Some(2)), x.view(), &y, 3);
        assert!(t.depth() <= 2);
    }
}
