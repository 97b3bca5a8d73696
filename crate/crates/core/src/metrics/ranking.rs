use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrScores {
    /// `None` for classes absent from truth (or with no negatives).
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over the defined classes; NaN if none are defined.
    pub macro_avg: f64,
}

fn check(truth: &[usize], probs: &ArrayView2<f64>) -> Result<()> {
    if truth.len() != probs.nrows() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: probs.nrows(),
        });
    }
    if let Some(&bad) = truth.iter().find(|&&t| t >= probs.ncols()) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    Ok(())
}

/// Sorted (descending score) groups of tied scores: (n_pos, n_neg) per group.
fn tie_groups(scores: &[f64], positive: &[bool]) -> Vec<(f64, u64, u64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut groups: Vec<(f64, u64, u64)> = Vec::new();
    for i in idx {
        let s = scores[i];
        match groups.last_mut() {
            Some(g) if g.0 == s => {
                if positive[i] {
                    g.1 += 1;
                } else {
                    g.2 += 1;
                }
            }
            _ => groups.push((s, positive[i] as u64, (!positive[i]) as u64)),
        }
    }
    groups
}

/// Area under the empirical ROC curve (trapezoid; ties count one half).
pub fn roc_auc_binary(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    let n = positive.len() as f64 - p;
    if p == 0.0 || n == 0.0 {
        return None;
    }
    let mut auc = 0.0;
    let mut neg_above = 0.0;
    for (_, gp, gn) in tie_groups(scores, positive) {
        // Positives in this group beat every negative strictly below them.
        auc += gp as f64 * (n - neg_above - gn as f64) + 0.5 * gp as f64 * gn as f64;
        neg_above += gn as f64;
    }
    Some(auc / (p * n))
}

/// ROC points (fpr, tpr) at every distinct threshold, starting at (0, 0).
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64, f64)> {
    let p = positive.iter().filter(|&&b| b).count().max(1) as f64;
    let n = (positive.len() - positive.iter().filter(|&&b| b).count()).max(1) as f64;
    let mut out = vec![(0.0, 0.0, f64::INFINITY)];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (s, gp, gn) in tie_groups(scores, positive) {
        tp += gp as f64;
        fp += gn as f64;
        out.push((fp / n, tp / p, s));
    }
    out
}

/// Average precision: step-wise area under the precision-recall curve.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let p = positive.iter().filter(|&&b| b).count() as f64;
    if p == 0.0 {
        return None;
    }
    let (mut tp, mut fp, mut prev_recall, mut ap) = (0.0, 0.0, 0.0, 0.0);
    for (_, gp, gn) in tie_groups(scores, positive) {
        tp += gp as f64;
        fp += gn as f64;
        let recall = tp / p;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    Some(ap)
}

/// Precision-recall points (recall, precision, threshold) per distinct threshold.
pub fn pr_curve(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64, f64)> {
    let p = positive.iter().filter(|&&b| b).count().max(1) as f64;
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut out = vec![(0.0, 1.0, f64::INFINITY)];
    for (s, gp, gn) in tie_groups(scores, positive) {
        tp += gp as f64;
        fp += gn as f64;
        out.push((tp / p, tp / (tp + fp), s));
    }
    out
}

fn ovr<F>(truth: &[usize], probs: &ArrayView2<f64>, f: F) -> Result<OvrScores>
where
    F: Fn(&[f64], &[bool]) -> Option<f64>,
{
    check(truth, probs)?;
    let mut per_class = Vec::with_capacity(probs.ncols());
    for c in 0..probs.ncols() {
        let scores: Vec<f64> = probs.column(c).to_vec();
        let pos: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let v = f(&scores, &pos);
        if v.is_none() {
            log::debug!("class {c} has no positives or no negatives; excluded from macro average");
        }
        per_class.push(v);
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_avg = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(OvrScores {
        per_class,
        macro_avg,
    })
}

/// One-vs-rest ROC-AUC per class with the macro mean over classes present in truth.
pub fn roc_auc_ovr(truth: &[usize], probs: ArrayView2<f64>) -> Result<OvrScores> {
    ovr(truth, &probs, roc_auc_binary)
}

/// One-vs-rest average precision per class with the macro mean.
pub fn pr_auc(truth: &[usize], probs: ArrayView2<f64>) -> Result<OvrScores> {
    ovr(truth, &probs, average_precision)
}

/// Mean over samples of the squared distance to the one-hot truth, summed
/// over classes (range [0, 2]).
pub fn brier_multiclass(truth: &[usize], probs: ArrayView2<f64>) -> Result<f64> {
    check(truth, &probs)?;
    if truth.is_empty() {
        return Err(Error::Empty("brier score of zero samples".into()));
    }
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(truth)
        .map(|(row, &t)| {
            row.iter()
                .enumerate()
                .map(|(c, &p)| (p - if c == t { 1.0 } else { 0.0 }).powi(2))
                .sum::<f64>()
        })
        .sum();
    Ok(total / truth.len() as f64)
}
