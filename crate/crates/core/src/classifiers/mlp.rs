//! Feedforward network with a softmax output, trained by mini-batch SGD with
//! momentum on cross-entropy plus L2.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{one_hot, softmax_rows, HyperReader};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
}

impl MlpParams {
    pub(crate) fn read(r: &mut HyperReader) -> Result<Self> {
        let activation = match r.choice("activation", &["relu", "tanh"])?.as_str() {
            "relu" => Activation::Relu,
            _ => Activation::Tanh,
        };
        Ok(MlpParams {
            hidden: r.int_list("hidden")?,
            activation,
            epochs: r.int("epochs", 1)?,
            batch_size: r.int("batch_size", 1)?,
            learning_rate: r.float("learning_rate", f64::MIN_POSITIVE, f64::MAX)?,
            momentum: r.float("momentum", 0.0, 0.999)?,
            l2: r.float("l2", 0.0, f64::MAX)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[fan_in x fan_out]`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Uniform weights in ±sqrt(k / fan_in) (k = 6 before ReLU, 3 otherwise), zero biases.
    pub fn init(sizes: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Mlp {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, s)| {
                let k = if l < last && activation == Activation::Relu { 6.0 } else { 3.0 };
                let limit = (k / s[0] as f64).sqrt();
                Layer {
                    w: Array2::from_shape_fn((s[0], s[1]), |_| rng.random_range(-limit..limit)),
                    b: Array1::zeros(s[1]),
                }
            })
            .collect();
        Mlp { activation, layers }
    }

    /// Activations of every layer, input first; the last entry holds logits.
    fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.w);
            z += &layer.b;
            if l + 1 < self.layers.len() {
                self.activation.apply(&mut z);
            }
            acts.push(z);
        }
        acts
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut p = self.forward(x).pop().unwrap();
        softmax_rows(&mut p);
        p
    }

    /// Mean cross-entropy plus `l2/2·Σ|W|²` and the gradient for every layer.
    pub fn loss_and_gradients(&self, x: ArrayView2<f64>, y: &[usize], l2: f64) -> (f64, Vec<Layer>) {
        let n = x.nrows() as f64;
        let n_classes = self.layers.last().unwrap().b.len();
        let mut acts = self.forward(x);
        let logits = acts.pop().unwrap();
        let mut ce = 0.0;
        for (i, row) in logits.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            ce += lse - row[y[i]];
        }
        let penalty: f64 = self.layers.iter().map(|l| l.w.iter().map(|v| v * v).sum::<f64>()).sum();
        let loss = ce / n + 0.5 * l2 * penalty;

        let mut delta = logits;
        softmax_rows(&mut delta);
        delta -= &one_hot(y, n_classes);
        delta /= n;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let a_prev = &acts[l];
            let gw = a_prev.t().dot(&delta) + &(&self.layers[l].w * l2);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { w: gw, b: gb });
            if l > 0 {
                let mut d = delta.dot(&self.layers[l].w.t());
                d.zip_mut_with(a_prev, |g, &a| *g *= self.activation.derivative(a));
                delta = d;
            }
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn fit(p: &MlpParams, x: ArrayView2<f64>, y: &[usize], n_classes: usize, seed: u64) -> Result<Mlp> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![x.ncols()];
        sizes.extend(&p.hidden);
        sizes.push(n_classes);
        let mut m = Mlp::init(&sizes, p.activation, &mut rng);
        let mut velocity: Vec<Layer> = m
            .layers
            .iter()
            .map(|l| Layer {
                w: Array2::zeros(l.w.dim()),
                b: Array1::zeros(l.b.len()),
            })
            .collect();
        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 1..=p.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(p.batch_size.min(n)) {
                let xb = x.select(Axis(0), chunk);
                let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
                let (loss, grads) = m.loss_and_gradients(xb.view(), &yb, p.l2);
                epoch_loss += loss * chunk.len() as f64;
                for ((layer, v), g) in m.layers.iter_mut().zip(velocity.iter_mut()).zip(grads) {
                    v.w *= p.momentum;
                    v.w.scaled_add(-p.learning_rate, &g.w);
                    v.b *= p.momentum;
                    v.b.scaled_add(-p.learning_rate, &g.b);
                    layer.w += &v.w;
                    layer.b += &v.b;
                }
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::argmax;
    use ndarray::arr2;

    fn xor() -> (Array2<f64>, Vec<usize>) {
        (arr2(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]), vec![0, 1, 1, 0])
    }

    #[test]
    fn gradients_match_finite_differences() {
        for activation in [Activation::Tanh, Activation::Relu] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let m = Mlp::init(&[4, 5, 3, 3], activation, &mut rng);
            let x = Array2::from_shape_fn((3, 4), |_| rng.random_range(-1.0..1.0));
            let y = [2, 0, 1];
            let l2 = 0.05;
            let (_, grads) = m.loss_and_gradients(x.view(), &y, l2);
            let h = 1e-6;
            for l in 0..m.layers.len() {
                for idx in [(0, 0), (1, 2), (2, 1)] {
                    let (mut p, mut q) = (m.clone(), m.clone());
                    p.layers[l].w[idx] += h;
                    q.layers[l].w[idx] -= h;
                    let fd = (p.loss_and_gradients(x.view(), &y, l2).0 - q.loss_and_gradients(x.view(), &y, l2).0) / (2.0 * h);
                    let g = grads[l].w[idx];
                    assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-4), "{activation:?} W{l}{idx:?}: {fd} vs {g}");
                }
                let (mut p, mut q) = (m.clone(), m.clone());
                p.layers[l].b[1] += h;
                q.layers[l].b[1] -= h;
                let fd = (p.loss_and_gradients(x.view(), &y, l2).0 - q.loss_and_gradients(x.view(), &y, l2).0) / (2.0 * h);
                let g = grads[l].b[1];
                assert!((fd - g).abs() <= 1e-4 * g.abs().max(1e-4), "{activation:?} b{l}: {fd} vs {g}");
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::init(&[3, 8, 5], Activation::Relu, &mut rng);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-10.0..10.0));
        for row in m.predict_proba(x.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor();
        let p = MlpParams {
            hidden: vec![4],
            activation: Activation::Tanh,
            epochs: 2000,
            batch_size: 4,
            learning_rate: 0.5,
            momentum: 0.9,
            l2: 0.0,
        };
        let m = Mlp::fit(&p, x.view(), &y, 2, 0).unwrap();
        let pred: Vec<usize> = m.predict_proba(x.view()).rows().into_iter().map(argmax).collect();
        assert_eq!(pred, y);
    }
}
