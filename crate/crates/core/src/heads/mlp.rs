//! One-hidden-layer ReLU network with softmax output and class-weighted
//! cross-entropy, with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// hidden x input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// classes x hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    /// Gradient with respect to the inputs (n x input).
    pub x: Array2<f64>,
}

pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
}

impl Mlp {
    /// He-normal hidden layer, Glorot-normal output layer, zero biases.
    pub fn init(input: usize, hidden: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, (2.0 / input as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, (2.0 / (hidden + classes) as f64).sqrt()).unwrap();
        Mlp {
            w1: Array2::from_shape_fn((hidden, input), |_| n1.sample(&mut rng)),
            b1: Array1::zeros(hidden),
            w2: Array2::from_shape_fn((classes, hidden), |_| n2.sample(&mut rng)),
            b2: Array1::zeros(classes),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.w2.nrows()
    }

    /// Inference: dropout off.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w1.t()) + &self.b1;
        h.mapv_inplace(|v| v.max(0.0));
        let mut logits = h.dot(&self.w2.t()) + &self.b2;
        softmax_rows(&mut logits);
        logits
    }

    /// Weighted cross-entropy `-Σ w_y log p_y / Σ w_y` and its gradients.
    /// `mask` is an inverted-dropout mask over hidden units (n x hidden).
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        y: &[usize],
        class_weights: &[f64],
        mask: Option<&Array2<f64>>,
    ) -> (f64, MlpGrads) {
        let z1 = x.dot(&self.w1.t()) + &self.b1;
        let relu = z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let mut a1 = &z1 * &relu;
        if let Some(m) = mask {
            a1 *= m;
        }
        let mut p = a1.dot(&self.w2.t()) + &self.b2;
        softmax_rows(&mut p);

        let sw: Vec<f64> = y.iter().map(|&c| class_weights[c]).collect();
        let total_w: f64 = sw.iter().sum();
        let loss = y
            .iter()
            .enumerate()
            .map(|(i, &c)| -sw[i] * p[[i, c]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / total_w;

        // dL/dlogits = w_i (p_i - onehot_i) / W
        let mut d2 = p;
        for (i, &c) in y.iter().enumerate() {
            d2[[i, c]] -= 1.0;
            d2.row_mut(i).mapv_inplace(|v| v * sw[i] / total_w);
        }
        let gw2 = d2.t().dot(&a1);
        let gb2 = d2.sum_axis(Axis(0));
        let mut d1 = d2.dot(&self.w2);
        if let Some(m) = mask {
            d1 *= m;
        }
        d1 *= &relu;
        let gw1 = d1.t().dot(&x);
        let gb1 = d1.sum_axis(Axis(0));
        let gx = d1.dot(&self.w1);
        (
            loss,
            MlpGrads {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
                x: gx,
            },
        )
    }

    /// Inverted-dropout mask: zero with probability `p`, else `1 / (1 - p)`.
    pub fn dropout_mask(n: usize, hidden: usize, p: f64, rng: &mut impl Rng) -> Array2<f64> {
        let keep = 1.0 / (1.0 - p);
        Array2::from_shape_fn((n, hidden), |_| if rng.gen::<f64>() < p { 0.0 } else { keep })
    }
}

/// Adam with default moment coefficients over one flat parameter buffer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Updates every buffer in `params` with the matching gradient; buffers
    /// are laid end to end in the optimizer state.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            debug_assert_eq!(p.len(), g.len());
            for j in 0..p.len() {
                let k = off + j;
                self.m[k] = BETA1 * self.m[k] + (1.0 - BETA1) * g[j];
                self.v[k] = BETA2 * self.v[k] + (1.0 - BETA2) * g[j] * g[j];
                p[j] -= lr * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + EPS);
            }
            off += p.len();
        }
        debug_assert_eq!(off, self.m.len());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn probabilities_on_simplex() {
        let m = Mlp::init(4, 8, 3, 1);
        let x = array![[1.0, 2.0, -1.0, 0.5], [0.0, 0.0, 0.0, 0.0]];
        let p = m.predict_proba(x.view());
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
            assert!(r.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn unit_weights_give_plain_mean_cross_entropy() {
        let m = Mlp::init(4, 8, 3, 2);
        let x = array![[1.0, 2.0, -1.0, 0.5], [0.3, -0.2, 0.1, 0.9], [2.0, 0.0, 1.0, -1.0]];
        let y = [0, 2, 1];
        let (l, _) = m.loss_and_grad(x.view(), &y, &[1.0; 3], None);
        let p = m.predict_proba(x.view());
        let plain = -(0..3).map(|i| p[[i, y[i]]].ln()).sum::<f64>() / 3.0;
        assert!((l - plain).abs() < 1e-9);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -1.0];
        let mut opt = Adam::new(2);
        opt.step(&mut [&mut p], &[&[0.5, -2.0]], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6 && (p[1] + 0.9).abs() < 1e-6);
    }
}
