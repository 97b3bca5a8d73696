//! Patient-level aggregation of event probability vectors: a weighted blend of
//! soft voting, confidence-weighted voting and a gated majority vote.

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{argmax, macro_f1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MajorityMode {
    /// One-hot vector of the modal class.
    OneHot,
    /// Share of events voting for each class.
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HighConfScope {
    All,
    ModalOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VotingConfig {
    pub w_soft: f64,
    pub w_conf: f64,
    pub w_major: f64,
    /// Gate needs at least this share of events agreeing with the modal class.
    pub agreement_threshold: f64,
    /// ... and at least this share of high-confidence events.
    pub high_conf_share_threshold: f64,
    /// An event is high-confidence when its max probability strictly exceeds this.
    pub high_conf_prob: f64,
    pub majority_mode: MajorityMode,
    pub high_conf_scope: HighConfScope,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig {
            w_soft: 0.3,
            w_conf: 0.4,
            w_major: 0.3,
            agreement_threshold: 0.6,
            high_conf_share_threshold: 0.5,
            high_conf_prob: 0.7,
            majority_mode: MajorityMode::OneHot,
            high_conf_scope: HighConfScope::All,
        }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_soft, self.w_conf, self.w_major];
        if ws.iter().any(|w| !(0.0..=1.0).contains(w)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("voting weights {ws:?} must be in [0,1] and sum to 1")));
        }
        for t in [self.agreement_threshold, self.high_conf_share_threshold, self.high_conf_prob] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidInput(format!("threshold {t} outside [0,1]")));
            }
        }
        Ok(())
    }
}

fn non_empty(p: &ArrayView2<f64>) -> Result<()> {
    if p.nrows() == 0 {
        return Err(Error::Empty("patient has no events".into()));
    }
    Ok(())
}

pub fn soft_vote(p: ArrayView2<f64>) -> Result<Array1<f64>> {
    non_empty(&p)?;
    Ok(p.mean_axis(Axis(0)).unwrap())
}

/// Mean of rows weighted by each row's max probability.
pub fn confidence_weighted_vote(p: ArrayView2<f64>) -> Result<Array1<f64>> {
    non_empty(&p)?;
    let mut acc = Array1::zeros(p.ncols());
    let mut total = 0.0;
    for row in p.rows() {
        let w = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        acc.scaled_add(w, &row);
        total += w;
    }
    if total <= 0.0 {
        return soft_vote(p);
    }
    Ok(acc / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateOutcome {
    pub active: bool,
    pub modal_class: usize,
    pub agreement: f64,
    pub high_conf_share: f64,
    pub component: Vec<f64>,
}

pub fn majority_gate(p: ArrayView2<f64>, cfg: &VotingConfig) -> Result<GateOutcome> {
    non_empty(&p)?;
    let k = p.ncols();
    let n = p.nrows() as f64;
    let votes: Vec<usize> = p.rows().into_iter().map(|r| argmax(r.iter().copied())).collect();
    let mut counts = vec![0usize; k];
    for &v in &votes {
        counts[v] += 1;
    }
    let top = *counts.iter().max().unwrap();
    if counts.iter().filter(|&&c| c == top).count() > 1 {
        log::debug!("modal class tie {counts:?}; taking the lowest index");
    }
    let modal = counts.iter().position(|&c| c == top).unwrap();
    let agreement = top as f64 / n;
    let high = p
        .rows()
        .into_iter()
        .zip(&votes)
        .filter(|(r, &v)| {
            let conf = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            conf > cfg.high_conf_prob && (cfg.high_conf_scope == HighConfScope::All || v == modal)
        })
        .count();
    let high_conf_share = high as f64 / n;
    let active = agreement >= cfg.agreement_threshold && high_conf_share >= cfg.high_conf_share_threshold;
    let component = if active {
        match cfg.majority_mode {
            MajorityMode::OneHot => (0..k).map(|c| if c == modal { 1.0 } else { 0.0 }).collect(),
            MajorityMode::Frequency => counts.iter().map(|&c| c as f64 / n).collect(),
        }
    } else {
        soft_vote(p)?.to_vec()
    };
    Ok(GateOutcome {
        active,
        modal_class: modal,
        agreement,
        high_conf_share,
        component,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteTrace {
    pub soft: Vec<f64>,
    pub confidence: Vec<f64>,
    pub gate: GateOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub probs: Vec<f64>,
    pub class: usize,
    pub trace: VoteTrace,
}

pub fn ensemble_patient_prediction(patient_id: &str, p: ArrayView2<f64>, cfg: &VotingConfig) -> Result<PatientPrediction> {
    let soft = soft_vote(p)?;
    let conf = confidence_weighted_vote(p)?;
    let gate = majority_gate(p, cfg)?;
    let probs: Vec<f64> = (0..p.ncols())
        .map(|c| cfg.w_soft * soft[c] + cfg.w_conf * conf[c] + cfg.w_major * gate.component[c])
        .collect();
    Ok(PatientPrediction {
        patient_id: patient_id.to_string(),
        class: argmax(probs.iter().copied()),
        probs,
        trace: VoteTrace {
            soft: soft.to_vec(),
            confidence: conf.to_vec(),
            gate,
        },
    })
}

/// Aggregates every patient. `rows_by_patient` pairs a patient id with the
/// rows of `probs` belonging to it.
pub fn aggregate_patients(
    probs: ArrayView2<f64>,
    rows_by_patient: &[(String, Vec<usize>)],
    cfg: &VotingConfig,
) -> Result<Vec<PatientPrediction>> {
    use rayon::prelude::*;
    cfg.validate()?;
    rows_by_patient
        .par_iter()
        .map(|(pid, rows)| ensemble_patient_prediction(pid, probs.select(Axis(0), rows).view(), cfg))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSearch {
    pub best: VotingConfig,
    pub best_score: f64,
    /// (w_soft, w_conf, w_major, patient macro-F1) for every candidate.
    pub candidates: Vec<(f64, f64, f64, f64)>,
}

/// Grid search over weight triples in steps of `1/steps`, scored by
/// patient-level macro-F1 on a validation split. Ties keep the earlier
/// candidate; the default triple is evaluated first.
pub fn search_weights(
    probs: ArrayView2<f64>,
    rows_by_patient: &[(String, Vec<usize>)],
    patient_truth: &[usize],
    base: &VotingConfig,
    steps: usize,
) -> Result<WeightSearch> {
    if steps == 0 {
        return Err(Error::InvalidInput("weight grid needs at least one step".into()));
    }
    let k = probs.ncols();
    let mut grid = vec![(base.w_soft, base.w_conf, base.w_major)];
    for a in 0..=steps {
        for b in 0..=steps - a {
            let t = (a as f64 / steps as f64, b as f64 / steps as f64, (steps - a - b) as f64 / steps as f64);
            grid.push(t);
        }
    }
    let mut best = (*base, f64::NEG_INFINITY);
    let mut candidates = Vec::with_capacity(grid.len());
    for (ws, wc, wm) in grid {
        let cfg = VotingConfig {
            w_soft: ws,
            w_conf: wc,
            w_major: (1.0 - ws - wc).max(0.0),
            ..*base
        };
        debug_assert!((cfg.w_major - wm).abs() < 1e-9);
        let preds = aggregate_patients(probs, rows_by_patient, &cfg)?;
        let pred: Vec<usize> = preds.iter().map(|p| p.class).collect();
        let score = macro_f1(patient_truth, &pred, k)?;
        candidates.push((cfg.w_soft, cfg.w_conf, cfg.w_major, score));
        if score > best.1 {
            best = (cfg, score);
        }
    }
    Ok(WeightSearch {
        best: best.0,
        best_score: best.1,
        candidates,
    })
}
