//! Evaluation suite: confusion-derived rates, ranking metrics, Brier score,
//! MCC and patient-level bootstrap intervals.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod bootstrap;
mod classification;
mod ranking;

pub use bootstrap::{bootstrap_ci, bootstrap_many, replicate_items, replicate_patients, BootstrapCi, BootstrapConfig};
pub use classification::{
    argmax, argmax_rows, classification_metrics, macro_f1, mcc_multiclass, rates_from_confusion, ClassRates,
    ClassificationSummary, ConfusionMatrix,
};
pub use ranking::{
    average_precision, brier_multiclass, pr_auc, pr_curve, roc_auc_binary, roc_auc_ovr, roc_curve, OvrScores,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    /// `None` when the metric is undefined on the full sample.
    pub value: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub valid_replicates: Option<usize>,
}

impl MetricValue {
    fn plain(value: Option<f64>) -> Self {
        MetricValue {
            value,
            lower: None,
            upper: None,
            valid_replicates: None,
        }
    }

    fn with_ci(mut self, ci: &BootstrapCi) -> Self {
        self.lower = ci.lower;
        self.upper = ci.upper;
        self.valid_replicates = Some(ci.valid);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_name: String,
    pub support: u64,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub specificity: MetricValue,
    pub npv: MetricValue,
    pub f1: MetricValue,
    pub roc_auc: MetricValue,
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_samples: usize,
    pub class_names: Vec<String>,
    pub accuracy: MetricValue,
    pub weighted_f1: MetricValue,
    pub macro_f1: MetricValue,
    pub mcc: MetricValue,
    pub brier: MetricValue,
    pub macro_roc_auc: MetricValue,
    pub macro_auprc: MetricValue,
    pub per_class: Vec<ClassReport>,
    pub confusion: Vec<Vec<u64>>,
    pub bootstrap: Option<BootstrapConfig>,
}

const N_AGG: usize = 7;
const N_PER_CLASS: usize = 6;

/// Every scalar of the report, flattened in a fixed order:
/// 7 aggregates, then 6 per-class values for each class.
fn scalars(truth: &[usize], probs: ArrayView2<f64>, k: usize) -> Result<Vec<Option<f64>>> {
    let pred: Vec<usize> = probs.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    let cm = ConfusionMatrix::from_labels(truth, &pred, k)?;
    let summary = rates_from_confusion(&cm);
    let (mcc, mcc_ok) = mcc_multiclass(&cm);
    let auc = roc_auc_ovr(truth, probs)?;
    let ap = pr_auc(truth, probs)?;
    let finite = |v: f64| v.is_finite().then_some(v);
    let mut out = vec![
        Some(summary.accuracy),
        Some(summary.weighted_f1),
        Some(summary.macro_f1),
        mcc_ok.then_some(mcc),
        Some(brier_multiclass(truth, probs)?),
        finite(auc.macro_avg),
        finite(ap.macro_avg),
    ];
    for (c, r) in summary.per_class.iter().enumerate() {
        let def = |name: &str, v: f64| (!r.undefined.iter().any(|u| u == name)).then_some(v);
        out.extend([
            def("precision", r.precision),
            def("recall", r.recall),
            def("specificity", r.specificity),
            def("npv", r.npv),
            def("f1", r.f1),
            auc.per_class[c],
        ]);
    }
    Ok(out)
}

/// Full report on `probs` (n x K) with hard predictions by argmax.
///
/// With `bootstrap = Some((groups, cfg))` each value also carries a
/// patient-level percentile interval; `groups[p]` lists the rows of patient p.
pub fn evaluate(
    truth: &[usize],
    probs: ArrayView2<f64>,
    class_names: &[String],
    bootstrap: Option<(&[Vec<usize>], &BootstrapConfig)>,
) -> Result<MetricReport> {
    let k = probs.ncols();
    if class_names.len() != k {
        return Err(Error::Dimension {
            expected: k,
            actual: class_names.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::Empty("no samples to evaluate".into()));
    }
    let pred = argmax_rows(&probs.to_owned());
    let cm = ConfusionMatrix::from_labels(truth, &pred, k)?;
    let summary = rates_from_confusion(&cm);
    let point = scalars(truth, probs, k)?;
    let mut values: Vec<MetricValue> = point.iter().map(|&v| MetricValue::plain(v)).collect();

    if let Some((groups, cfg)) = bootstrap {
        let cis = bootstrap_many(
            |idx| {
                let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
                let p = probs.select(ndarray::Axis(0), idx);
                scalars(&t, p.view(), k).unwrap_or_else(|_| vec![None; point.len()])
            },
            groups,
            cfg,
        )?;
        values = values.into_iter().zip(&cis).map(|(v, ci)| v.with_ci(ci)).collect();
    }

    let mut it = values.into_iter();
    let mut next = || it.next().expect("scalar layout");
    let accuracy = next();
    let weighted_f1 = next();
    let macro_f1 = next();
    let mcc = next();
    let brier = next();
    let macro_roc_auc = next();
    let macro_auprc = next();
    let per_class = (0..k)
        .map(|c| ClassReport {
            class_name: class_names[c].clone(),
            support: summary.per_class[c].support,
            precision: next(),
            recall: next(),
            specificity: next(),
            npv: next(),
            f1: next(),
            roc_auc: next(),
            undefined: summary.per_class[c].undefined.clone(),
        })
        .collect();
    debug_assert_eq!(point.len(), N_AGG + N_PER_CLASS * k);

    Ok(MetricReport {
        n_samples: truth.len(),
        class_names: class_names.to_vec(),
        accuracy,
        weighted_f1,
        macro_f1,
        mcc,
        brier,
        macro_roc_auc,
        macro_auprc,
        per_class,
        confusion: cm.counts.rows().into_iter().map(|r| r.to_vec()).collect(),
        bootstrap: bootstrap.map(|(_, c)| *c),
    })
}

/// Groups row indices by patient, in first-appearance order.
pub fn group_rows(patient_of_row: &[String]) -> Vec<Vec<usize>> {
    let mut order: Vec<&str> = Vec::new();
    let mut map: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, p) in patient_of_row.iter().enumerate() {
        let g = *map.entry(p.as_str()).or_insert_with(|| {
            order.push(p);
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// One-hot rows for hard labels, handy for feeding label-only predictions
/// through the probability-based report.
pub fn one_hot(labels: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), k));
    for (i, &l) in labels.iter().enumerate() {
        m[[i, l]] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|c| format!("c{c}")).collect()
    }

    #[test]
    fn report_on_perfect_predictions() {
        let probs = array![[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.1, 0.9]];
        let r = evaluate(&[0, 1, 0, 1], probs.view(), &names(2), None).unwrap();
        assert_eq!(r.accuracy.value, Some(1.0));
        assert_eq!(r.mcc.value, Some(1.0));
        assert_eq!(r.macro_roc_auc.value, Some(1.0));
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn report_with_bootstrap_contains_point() {
        let n = 60;
        let truth: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let probs = Array2::from_shape_fn((n, 3), |(i, c)| {
            if c == (if i % 7 == 0 { (i + 1) % 3 } else { i % 3 }) {
                0.6
            } else {
                0.2
            }
        });
        let patients: Vec<String> = (0..n).map(|i| format!("p{}", i / 3)).collect();
        let groups = group_rows(&patients);
        let cfg = BootstrapConfig { replicates: 200, seed: 2 };
        let r = evaluate(&truth, probs.view(), &names(3), Some((&groups, &cfg))).unwrap();
        let a = &r.accuracy;
        assert!(a.lower.unwrap() <= a.value.unwrap() && a.value.unwrap() <= a.upper.unwrap());
        let again = evaluate(&truth, probs.view(), &names(3), Some((&groups, &cfg))).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }

    #[test]
    fn group_rows_preserves_first_appearance() {
        let g = group_rows(&["b".into(), "a".into(), "b".into()]);
        assert_eq!(g, vec![vec![0, 2], vec![1]]);
    }
}
