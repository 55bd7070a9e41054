//! Multiclass softmax gradient boosting with Newton leaves, and the
//! random-forest-flavoured variant with row and per-node feature subsampling.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{presort, Grower, Newton, Tree, HESSIAN_FLOOR};
use super::{derive_seed, one_hot, softmax_rows, HyperReader};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Fraction of rows drawn (without replacement) each round.
    pub subsample: f64,
    /// Draw √dim features at each node.
    pub feature_subsampling: bool,
}

impl GbtParams {
    pub(crate) fn read(r: &mut HyperReader, rf: bool) -> Result<Self> {
        Ok(GbtParams {
            n_rounds: r.int("n_rounds", 1)?,
            learning_rate: r.float("learning_rate", f64::MIN_POSITIVE, 1.0)?,
            max_depth: r.int("max_depth", 1)?,
            min_samples_split: r.int("min_samples_split", 2)?,
            subsample: if rf { r.float("subsample", f64::MIN_POSITIVE, 1.0)? } else { 1.0 },
            feature_subsampling: rf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbt {
    pub n_classes: usize,
    pub learning_rate: f64,
    /// One regression tree per class per round.
    pub rounds: Vec<Vec<Tree>>,
}

impl Gbt {
    pub fn fit(p: &GbtParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Gbt {
        let (n, dim) = x.dim();
        let xt = x.t().as_standard_layout().into_owned();
        let per_node = ((dim as f64).sqrt().round() as usize).clamp(1, dim);
        let orders = (!p.feature_subsampling).then(|| presort(xt.view()));
        let grower = Grower {
            xt: xt.view(),
            max_depth: Some(p.max_depth),
            min_samples_split: p.min_samples_split,
            features_per_node: p.feature_subsampling.then_some(per_node),
            presorted: orders.as_deref(),
        };
        let target = one_hot(y, n_classes);
        let mut raw = Array2::<f64>::zeros((n, n_classes));
        let mut model = Gbt {
            n_classes,
            learning_rate: p.learning_rate,
            rounds: Vec::with_capacity(p.n_rounds),
        };
        let take = ((p.subsample * n as f64).round() as usize).clamp(1, n);
        for r in 0..p.n_rounds {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
            let mut prob = raw.clone();
            softmax_rows(&mut prob);
            let rows: Vec<usize> = if take < n {
                let mut v = sample(&mut rng, n, take).into_vec();
                v.sort_unstable();
                v
            } else {
                (0..n).collect()
            };
            let mut trees = Vec::with_capacity(n_classes);
            for c in 0..n_classes {
                let g: Vec<f64> = (0..n).map(|i| target[[i, c]] - prob[[i, c]]).collect();
                let h: Vec<f64> = (0..n).map(|i| (prob[[i, c]] * (1.0 - prob[[i, c]])).max(HESSIAN_FLOOR)).collect();
                let tree = grower.grow(&Newton { g: &g, h: &h }, rows.clone(), &mut rng);
                for i in 0..n {
                    raw[[i, c]] += p.learning_rate * tree.leaf_value(x.row(i))[0];
                }
                trees.push(tree);
            }
            model.rounds.push(trees);
        }
        model
    }

    /// Summed leaf scores of the first `rounds` rounds.
    pub fn raw_scores(&self, x: ArrayView2<f64>, rounds: usize) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for trees in self.rounds.iter().take(rounds) {
            for (c, t) in trees.iter().enumerate() {
                for (i, row) in x.rows().into_iter().enumerate() {
                    out[[i, c]] += self.learning_rate * t.leaf_value(row)[0];
                }
            }
        }
        out
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut p = self.raw_scores(x, self.rounds.len());
        softmax_rows(&mut p);
        p
    }
}
