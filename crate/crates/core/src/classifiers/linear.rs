//! One-vs-rest linear models trained by mini-batch SGD on logistic or hinge
//! loss with L2 penalty. Backs logistic regression, the linear SVC and the
//! SGD classifier.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HyperReader;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub loss: Loss,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    /// Rows per update; 0 means the full training set.
    pub batch_size: usize,
}

impl LinearParams {
    pub(crate) fn read(r: &mut HyperReader) -> Result<Self> {
        let loss = match r.choice("loss", &["logistic", "hinge"])?.as_str() {
            "logistic" => Loss::Logistic,
            _ => Loss::Hinge,
        };
        Ok(LinearParams {
            loss,
            epochs: r.int("epochs", 1)?,
            learning_rate: r.float("learning_rate", f64::MIN_POSITIVE, f64::MAX)?,
            l2: r.float("l2", 0.0, f64::MAX)?,
            batch_size: r.int("batch_size", 0)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub loss: Loss,
    /// `[n_classes x dim]`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// ln(1 + e^v) without overflow.
fn softplus(v: f64) -> f64 {
    if v > 0.0 {
        v + (-v).exp().ln_1p()
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Summed one-vs-rest loss averaged over rows plus `l2/2·|w|²`, with its gradient.
pub fn loss_and_gradient(
    w: &Array2<f64>,
    b: &Array1<f64>,
    x: ArrayView2<f64>,
    y: &[usize],
    loss: Loss,
    l2: f64,
) -> (f64, Array2<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mut z = x.dot(&w.t());
    z += b;
    let mut total = 0.0;
    for (i, mut row) in z.axis_iter_mut(Axis(0)).enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let t = if y[i] == c { 1.0 } else { -1.0 };
            let m = t * *v;
            let (l, dl) = match loss {
                Loss::Logistic => (softplus(-m), -t * sigmoid(-m)),
                Loss::Hinge if m < 1.0 => (1.0 - m, -t),
                Loss::Hinge => (0.0, 0.0),
            };
            total += l;
            *v = dl / n;
        }
    }
    let gw = z.t().dot(&x) + &(w * l2);
    let gb = z.sum_axis(Axis(0));
    let value = total / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (value, gw, gb)
}

impl Linear {
    pub fn zeros(loss: Loss, n_classes: usize, dim: usize) -> Linear {
        Linear {
            loss,
            w: Array2::zeros((n_classes, dim)),
            b: Array1::zeros(n_classes),
        }
    }

    pub fn fit(p: &LinearParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Result<Linear> {
        let n = x.nrows();
        let mut m = Linear::zeros(p.loss, n_classes, x.ncols());
        let batch = if p.batch_size == 0 { n } else { p.batch_size.min(n) };
        let x = x.as_standard_layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 1..=p.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                epoch_loss += m.step(x.view(), y, chunk, p.learning_rate, p.l2) * chunk.len() as f64;
            }
            if !epoch_loss.is_finite() || m.w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
        }
        Ok(m)
    }

    /// One gradient step on the rows `batch` of a row-major `x`, in place.
    /// Same update as subtracting `lr` times [`loss_and_gradient`]; returns the batch loss.
    fn step(&mut self, x: ArrayView2<f64>, y: &[usize], batch: &[usize], lr: f64, l2: f64) -> f64 {
        let c = self.b.len();
        let inv = 1.0 / batch.len() as f64;
        let mut dl = vec![0.0; batch.len() * c];
        let mut total = 0.0;
        for (r, &i) in batch.iter().enumerate() {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("row-major");
            for k in 0..c {
                let wk = self.w.row(k);
                let z = wk.as_slice().expect("row-major").iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + self.b[k];
                let t = if y[i] == k { 1.0 } else { -1.0 };
                let margin = t * z;
                let (l, d) = match self.loss {
                    Loss::Logistic => (softplus(-margin), -t * sigmoid(-margin)),
                    Loss::Hinge if margin < 1.0 => (1.0 - margin, -t),
                    Loss::Hinge => (0.0, 0.0),
                };
                total += l;
                dl[r * c + k] = d * inv;
            }
        }
        let penalty = 0.5 * l2 * self.w.iter().map(|v| v * v).sum::<f64>();
        if l2 > 0.0 {
            self.w *= 1.0 - lr * l2;
        }
        for (r, &i) in batch.iter().enumerate() {
            let xi = x.row(i);
            let xi = xi.as_slice().expect("row-major");
            for k in 0..c {
                let d = dl[r * c + k];
                if d != 0.0 {
                    let mut wk = self.w.row_mut(k);
                    wk.as_slice_mut()
                        .expect("row-major")
                        .iter_mut()
                        .zip(xi)
                        .for_each(|(w, v)| *w -= lr * d * v);
                    self.b[k] -= lr * d;
                }
            }
        }
        total * inv + penalty
    }

    pub fn decision_values(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.w.t());
        z += &self.b;
        z
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::argmax;
    use ndarray::arr2;
    use rand::Rng;

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((7, 4), |_| rng.random_range(-1.0..1.0));
        let y = [0, 2, 1, 1, 0, 2, 2];
        let w = Array2::from_shape_fn((3, 4), |_| rng.random_range(-0.5..0.5));
        let b = Array1::from_shape_fn(3, |_| rng.random_range(-0.5..0.5));
        let l2 = 0.3;
        let (_, gw, gb) = loss_and_gradient(&w, &b, x.view(), &y, Loss::Logistic, l2);
        let h = 1e-6;
        for idx in [(0, 0), (1, 3), (2, 1), (2, 2)] {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[idx] += h;
            wm[idx] -= h;
            let fd = (loss_and_gradient(&wp, &b, x.view(), &y, Loss::Logistic, l2).0
                - loss_and_gradient(&wm, &b, x.view(), &y, Loss::Logistic, l2).0)
                / (2.0 * h);
            assert!((fd - gw[idx]).abs() <= 1e-6 * gw[idx].abs().max(1e-3), "w{idx:?}: {fd} vs {}", gw[idx]);
        }
        for c in 0..3 {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[c] += h;
            bm[c] -= h;
            let fd = (loss_and_gradient(&w, &bp, x.view(), &y, Loss::Logistic, l2).0
                - loss_and_gradient(&w, &bm, x.view(), &y, Loss::Logistic, l2).0)
                / (2.0 * h);
            assert!((fd - gb[c]).abs() <= 1e-6 * gb[c].abs().max(1e-3), "b{c}");
        }
    }

    fn params(loss: Loss, epochs: usize, batch: usize) -> LinearParams {
        LinearParams {
            loss,
            epochs,
            learning_rate: 0.5,
            l2: 0.0,
            batch_size: batch,
        }
    }

    #[test]
    fn separable_line_is_learned() {
        let x = arr2(&[[0.0], [0.1], [0.2], [0.3], [0.7], [0.8], [0.9], [1.0]]);
        let y = [0, 0, 0, 0, 1, 1, 1, 1];
        for loss in [Loss::Logistic, Loss::Hinge] {
            for batch in [0, 1, 3] {
                let m = Linear::fit(&params(loss, 200, batch), x.view(), &y, 2, 0).unwrap();
                let pred: Vec<usize> = m.decision_values(x.view()).rows().into_iter().map(argmax).collect();
                assert_eq!(pred, y, "{loss:?} batch {batch}");
            }
        }
    }

    #[test]
    fn in_place_step_matches_the_reference_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::from_shape_fn((9, 5), |_| rng.random_range(-1.0..1.0));
        let y = [0, 1, 2, 3, 0, 1, 2, 3, 1];
        for loss in [Loss::Logistic, Loss::Hinge] {
            let mut m = Linear {
                loss,
                w: Array2::from_shape_fn((4, 5), |_| rng.random_range(-0.5..0.5)),
                b: Array1::from_shape_fn(4, |_| rng.random_range(-0.5..0.5)),
            };
            let batch = [7, 2, 4, 0];
            let xb = x.select(Axis(0), &batch);
            let yb: Vec<usize> = batch.iter().map(|&i| y[i]).collect();
            let (value, gw, gb) = loss_and_gradient(&m.w, &m.b, xb.view(), &yb, loss, 0.2);
            let (w0, b0) = (m.w.clone(), m.b.clone());
            let got = m.step(x.view(), &y, &batch, 0.3, 0.2);
            assert!((got - value).abs() < 1e-12);
            for (a, b) in m.w.iter().zip((&w0 - &(&gw * 0.3)).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in m.b.iter().zip((&b0 - &(&gb * 0.3)).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let m = Linear::zeros(Loss::Hinge, 3, 2);
        let z = m.decision_values(arr2(&[[0.4, 0.9]]).view());
        assert!(z.iter().all(|&v| v == 0.0));
        assert_eq!(argmax(z.row(0)), 0);
    }

    #[test]
    fn huge_step_diverges_with_epoch() {
        let x = arr2(&[[1e200], [-1e200]]);
        let p = LinearParams {
            learning_rate: 1e200,
            ..params(Loss::Logistic, 5, 0)
        };
        assert!(matches!(Linear::fit(&p, x.view(), &[0, 1], 2, 0), Err(Error::Divergence { epoch: 1 })));
    }
}
