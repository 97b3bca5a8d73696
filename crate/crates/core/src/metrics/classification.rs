use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], pred: &[usize], k: usize) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Dimension {
                expected: truth.len(),
                actual: pred.len(),
            });
        }
        let mut counts = Array2::zeros((k, k));
        for (&t, &p) in truth.iter().zip(pred) {
            if t >= k || p >= k {
                return Err(Error::InvalidInput(format!("label {} out of range for {k} classes", t.max(p))));
            }
            counts[[t, p]] += 1;
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn k(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }
}

/// One-vs-rest rates for a single class. Ratios with a zero denominator are
/// reported as 0 and named in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRates {
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub npv: f64,
    pub f1: f64,
    pub support: u64,
    pub predicted: u64,
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassRates>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn rates_from_confusion(cm: &ConfusionMatrix) -> ClassificationSummary {
    let k = cm.k();
    let n = cm.total();
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[[c, c]];
        let support: u64 = cm.counts.row(c).sum();
        let predicted: u64 = cm.counts.column(c).sum();
        let fp = predicted - tp;
        let fn_ = support - tp;
        let tn = n - tp - fp - fn_;
        let mut undefined = Vec::new();
        let precision = ratio(tp, tp + fp, "precision", &mut undefined);
        let recall = ratio(tp, tp + fn_, "recall", &mut undefined);
        let specificity = ratio(tn, tn + fp, "specificity", &mut undefined);
        let npv = ratio(tn, tn + fn_, "npv", &mut undefined);
        let f1 = ratio(2 * tp, 2 * tp + fp + fn_, "f1", &mut undefined);
        per_class.push(ClassRates {
            precision,
            recall,
            specificity,
            npv,
            f1,
            support,
            predicted,
            undefined,
        });
    }
    let accuracy = if n == 0 {
        0.0
    } else {
        (0..k).map(|c| cm.counts[[c, c]]).sum::<u64>() as f64 / n as f64
    };
    // Macro average over classes that occur in truth or predictions.
    let active: Vec<&ClassRates> = per_class
        .iter()
        .filter(|r| r.support > 0 || r.predicted > 0)
        .collect();
    let macro_f1 = if active.is_empty() {
        0.0
    } else {
        active.iter().map(|r| r.f1).sum::<f64>() / active.len() as f64
    };
    let weighted_f1 = if n == 0 {
        0.0
    } else {
        per_class.iter().map(|r| r.f1 * r.support as f64).sum::<f64>() / n as f64
    };
    ClassificationSummary {
        accuracy,
        macro_f1,
        weighted_f1,
        per_class,
    }
}

pub fn classification_metrics(truth: &[usize], pred: &[usize], k: usize) -> Result<ClassificationSummary> {
    Ok(rates_from_confusion(&ConfusionMatrix::from_labels(truth, pred, k)?))
}

pub fn macro_f1(truth: &[usize], pred: &[usize], k: usize) -> Result<f64> {
    Ok(classification_metrics(truth, pred, k)?.macro_f1)
}

/// Multiclass Matthews correlation. Returns `(value, defined)`; a zero
/// denominator (e.g. every sample in one class) gives `(0.0, false)`.
pub fn mcc_multiclass(cm: &ConfusionMatrix) -> (f64, bool) {
    let k = cm.k();
    let s = cm.total() as f64;
    let c: f64 = (0..k).map(|i| cm.counts[[i, i]] as f64).sum();
    let t: Vec<f64> = (0..k).map(|i| cm.counts.row(i).sum() as f64).collect();
    let p: Vec<f64> = (0..k).map(|i| cm.counts.column(i).sum() as f64).collect();
    let num = c * s - t.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
    let d1 = s * s - p.iter().map(|x| x * x).sum::<f64>();
    let d2 = s * s - t.iter().map(|x| x * x).sum::<f64>();
    if d1 <= 0.0 || d2 <= 0.0 {
        return (0.0, false);
    }
    ((num / (d1 * d2).sqrt()).clamp(-1.0, 1.0), true)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in row.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn argmax_rows(probs: &Array2<f64>) -> Vec<usize> {
    probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect()
}
