//! k nearest neighbours by Euclidean distance with majority vote.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::HyperReader;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KnnParams {
    pub k: usize,
}

impl KnnParams {
    pub(crate) fn read(r: &mut HyperReader) -> Result<Self> {
        Ok(KnnParams { k: r.int("k", 1)? })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Knn {
    pub k: usize,
    pub n_classes: usize,
    pub x: Array2<f64>,
    pub y: Vec<usize>,
}

impl Knn {
    pub fn fit(p: &KnnParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize) -> Result<Knn> {
        if p.k > x.nrows() {
            return Err(Error::Config(format!("knn: k = {} exceeds the {} training rows", p.k, x.nrows())));
        }
        Ok(Knn {
            k: p.k,
            n_classes,
            x: x.to_owned(),
            y: y.to_vec(),
        })
    }

    /// Indices of the k nearest training rows; equal distances keep the lower index.
    pub fn neighbours(&self, q: &[f64]) -> Vec<usize> {
        let mut d: Vec<(f64, usize)> = self
            .x
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, row)| (row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
            d.truncate(self.k);
        }
        d.sort_by(cmp);
        d.into_iter().map(|(_, i)| i).collect()
    }

    /// Vote fractions per class.
    pub fn scores(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.n_classes));
        for (r, q) in x.rows().into_iter().enumerate() {
            let q = q.to_vec();
            for i in self.neighbours(&q) {
                out[[r, self.y[i]]] += 1.0 / self.k as f64;
            }
        }
        out
    }
}
