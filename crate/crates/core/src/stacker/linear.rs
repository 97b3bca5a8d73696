//! L2-regularized multinomial logistic regression on standardized features.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::{softmax_rows, Adam};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub l2: f64,
    pub learning_rate: f64,
    pub iterations: usize,
}

impl Default for LinearParams {
    fn default() -> Self {
        LinearParams {
            l2: 1e-2,
            learning_rate: 0.05,
            iterations: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub mean: Array1<f64>,
    /// Zero for constant features, which are then ignored.
    pub scale: Array1<f64>,
    /// Classes x features, on the standardized scale.
    pub coef: Array2<f64>,
    pub intercept: Array1<f64>,
}

impl LinearModel {
    pub fn fit(x: ArrayView2<f64>, y: &[usize], k: usize, params: &LinearParams) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 || n != y.len() {
            return Err(Error::Dimension {
                expected: n,
                actual: y.len(),
            });
        }
        if y.iter().any(|&c| c >= k) {
            return Err(Error::InvalidInput("label out of range".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let std = x.std_axis(Axis(0), 0.0);
        let scale = std.mapv(|s| if s > 1e-12 { 1.0 / s } else { 0.0 });
        let z = (&x - &mean) * &scale;

        let mut coef = Array2::<f64>::zeros((k, d));
        let mut intercept = Array1::<f64>::zeros(k);
        let mut adam = Adam::new(k * d + k);
        for _ in 0..params.iterations {
            let mut p = z.dot(&coef.t()) + &intercept;
            softmax_rows(&mut p);
            for (i, &c) in y.iter().enumerate() {
                p[[i, c]] -= 1.0;
            }
            p /= n as f64;
            let g_coef = p.t().dot(&z) + &(&coef * params.l2);
            let g_int = p.sum_axis(Axis(0));
            adam.step(
                &mut [coef.as_slice_mut().unwrap(), intercept.as_slice_mut().unwrap()],
                &[g_coef.as_slice().unwrap(), g_int.as_slice().unwrap()],
                params.learning_rate,
            );
        }
        Ok(LinearModel {
            mean,
            scale,
            coef,
            intercept,
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Dimension {
                expected: self.mean.len(),
                actual: x.ncols(),
            });
        }
        let z = (&x - &self.mean) * &self.scale;
        let mut p = z.dot(&self.coef.t()) + &self.intercept;
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Mean absolute standardized coefficient per feature.
    pub fn importance(&self) -> Vec<f64> {
        self.coef.map(|v| v.abs()).mean_axis(Axis(0)).expect("k > 0").to_vec()
    }
}
