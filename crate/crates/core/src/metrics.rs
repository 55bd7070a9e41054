//! Confusion matrices and macro-averaged classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics of one confusion matrix (rows are true classes, columns predictions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: Vec<Vec<u64>>,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    m
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Accuracy and macro precision/recall/F1; classes with a zero denominator score 0.
pub fn compute_metrics(confusion: &[Vec<i64>]) -> Result<MetricsReport> {
    let c = confusion.len();
    if c == 0 || confusion.iter().any(|row| row.len() != c) {
        return Err(Error::Input("confusion matrix must be square and non-empty".into()));
    }
    if confusion.iter().flatten().any(|&v| v < 0) {
        return Err(Error::Input("confusion matrix has negative entries".into()));
    }
    let m: Vec<Vec<u64>> = confusion.iter().map(|r| r.iter().map(|&v| v as u64).collect()).collect();
    Ok(metrics_of(m))
}

pub(crate) fn metrics_of(m: Vec<Vec<u64>>) -> MetricsReport {
    let c = m.len();
    let total: u64 = m.iter().flatten().sum();
    let trace: u64 = (0..c).map(|i| m[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|k| {
            let tp = m[k][k] as f64;
            let predicted: u64 = m.iter().map(|r| r[k]).sum();
            let actual: u64 = m[k].iter().sum();
            let precision = ratio(tp, predicted as f64);
            let recall = ratio(tp, actual as f64);
            ClassMetrics {
                precision,
                recall,
                f1: ratio(2.0 * precision * recall, precision + recall),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    MetricsReport {
        accuracy: ratio(trace as f64, total as f64),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
        per_class,
        confusion: m,
    }
}

pub fn macro_f1(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> f64 {
    metrics_of(confusion_matrix(y_true, y_pred, n_classes)).f1
}
