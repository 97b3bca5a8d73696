//! Meta-learner: hyperparameter search with patient-grouped CV, refit, and
//! feature importance.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gbdt::{Gbdt, GbdtParams};
use super::linear::{LinearModel, LinearParams};
use super::oof::carve_validation;
use super::tpe::{Dim, Tpe};
use super::{assign_folds, FoldAssignment};
use crate::error::{Error, Result};
use crate::metrics::{argmax_rows, macro_f1};
use crate::tasks::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparameterSpace {
    pub n_estimators: (usize, usize),
    pub max_depth: (usize, usize),
    /// Searched on a log scale.
    pub learning_rate: (f64, f64),
    pub num_leaves: (usize, usize),
    pub min_child_samples: (usize, usize),
    pub subsample: (f64, f64),
    pub colsample: (f64, f64),
    pub early_stopping_rounds: usize,
    pub trials: usize,
}

impl Default for HyperparameterSpace {
    fn default() -> Self {
        HyperparameterSpace {
            n_estimators: (50, 500),
            max_depth: (3, 15),
            learning_rate: (0.01, 0.3),
            num_leaves: (15, 300),
            min_child_samples: (5, 100),
            subsample: (0.6, 1.0),
            colsample: (0.6, 1.0),
            early_stopping_rounds: 20,
            trials: 100,
        }
    }
}

fn mid(r: (usize, usize)) -> usize {
    (r.0 + r.1) / 2
}

impl HyperparameterSpace {
    pub fn with_trials(self, trials: usize) -> Self {
        HyperparameterSpace { trials, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ints = [
            self.n_estimators,
            self.max_depth,
            self.num_leaves,
            self.min_child_samples,
        ];
        let ok = ints.iter().all(|r| r.0 >= 1 && r.0 <= r.1)
            && self.num_leaves.0 >= 2
            && self.learning_rate.0 > 0.0
            && self.learning_rate.0 <= self.learning_rate.1
            && [self.subsample, self.colsample]
                .iter()
                .all(|r| r.0 > 0.0 && r.0 <= r.1 && r.1 <= 1.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid search space {self:?}")))
        }
    }

    /// Fixed mid-range parameters (geometric mean for the learning rate).
    pub fn defaults(&self, seed: u64) -> GbdtParams {
        GbdtParams {
            n_estimators: mid(self.n_estimators),
            max_depth: mid(self.max_depth),
            learning_rate: (self.learning_rate.0 * self.learning_rate.1).sqrt(),
            num_leaves: mid(self.num_leaves),
            min_child_samples: mid(self.min_child_samples),
            subsample: 0.5 * (self.subsample.0 + self.subsample.1),
            colsample: 0.5 * (self.colsample.0 + self.colsample.1),
            early_stopping_rounds: self.early_stopping_rounds,
            seed,
            ..GbdtParams::default()
        }
    }

    pub fn contains(&self, p: &GbdtParams) -> bool {
        let within = |v: usize, r: (usize, usize)| r.0 <= v && v <= r.1;
        let withinf = |v: f64, r: (f64, f64)| r.0 <= v && v <= r.1;
        within(p.n_estimators, self.n_estimators)
            && within(p.max_depth, self.max_depth)
            && withinf(p.learning_rate, self.learning_rate)
            && within(p.num_leaves, self.num_leaves)
            && within(p.min_child_samples, self.min_child_samples)
            && withinf(p.subsample, self.subsample)
            && withinf(p.colsample, self.colsample)
    }

    fn dims(&self) -> Vec<Dim> {
        let int = |r: (usize, usize)| Dim::Int {
            lo: r.0 as i64,
            hi: r.1 as i64,
        };
        vec![
            int(self.n_estimators),
            int(self.max_depth),
            Dim::Float {
                lo: self.learning_rate.0,
                hi: self.learning_rate.1,
                log: true,
            },
            int(self.num_leaves),
            int(self.min_child_samples),
            Dim::Float {
                lo: self.subsample.0,
                hi: self.subsample.1,
                log: false,
            },
            Dim::Float {
                lo: self.colsample.0,
                hi: self.colsample.1,
                log: false,
            },
        ]
    }

    fn params_from(&self, v: &[f64], seed: u64) -> GbdtParams {
        GbdtParams {
            n_estimators: v[0] as usize,
            max_depth: v[1] as usize,
            learning_rate: v[2],
            num_leaves: v[3] as usize,
            min_child_samples: v[4] as usize,
            subsample: v[5],
            colsample: v[6],
            early_stopping_rounds: self.early_stopping_rounds,
            seed,
            ..GbdtParams::default()
        }
    }

    fn point_of(p: &GbdtParams) -> Vec<f64> {
        vec![
            p.n_estimators as f64,
            p.max_depth as f64,
            p.learning_rate,
            p.num_leaves as f64,
            p.min_child_samples as f64,
            p.subsample,
            p.colsample,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaLearnerKind {
    Boosted,
    /// Regularized multinomial linear model, for minimal environments.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaOptions {
    pub learner: MetaLearnerKind,
    /// Patient-grouped folds used to score each trial.
    pub cv_folds: usize,
    /// Share of each CV training fold's patients held out for early stopping.
    pub inner_val_fraction: f64,
}

impl Default for MetaOptions {
    fn default() -> Self {
        MetaOptions {
            learner: MetaLearnerKind::Boosted,
            cv_folds: 5,
            inner_val_fraction: 0.1,
        }
    }
}

/// Training matrix with row labels and the patient of each row.
#[derive(Debug, Clone, Copy)]
pub struct MetaData<'a> {
    pub x: ArrayView2<'a, f64>,
    pub labels: &'a [usize],
    pub row_patient: &'a [String],
    pub feature_names: &'a [String],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub number: usize,
    pub params: GbdtParams,
    pub cv_macro_f1: f64,
    /// Mean early-stopped round count across CV folds.
    pub mean_best_rounds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaLearner {
    Boosted(Gbdt),
    Linear(LinearModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    pub target: TaskId,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub learner: Option<MetaLearner>,
    /// Chosen parameters (boosted learner only).
    pub params: Option<GbdtParams>,
    /// Round count used for the final refit.
    pub refit_rounds: Option<usize>,
    pub trials: Vec<Trial>,
    /// Normalized importance per feature, in feature order.
    pub importance: Vec<f64>,
}

impl MetaModel {
    pub fn unfitted(target: TaskId, feature_names: Vec<String>) -> Self {
        MetaModel {
            target,
            class_names: target.taxonomy().class_order,
            feature_names,
            learner: None,
            params: None,
            refit_rounds: None,
            trials: Vec::new(),
            importance: Vec::new(),
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match &self.learner {
            Some(MetaLearner::Boosted(m)) => m.predict_proba(x),
            Some(MetaLearner::Linear(m)) => m.predict_proba(x),
            None => Err(Error::NotFitted(format!("{} meta-model", self.target))),
        }
    }

    pub fn best_trial(&self) -> Option<&Trial> {
        self.trials.iter().fold(None, |best: Option<&Trial>, t| match best {
            Some(b) if b.cv_macro_f1 >= t.cv_macro_f1 => Some(b),
            _ => Some(t),
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Ranked (feature, importance) pairs, descending, summing to 1.
pub fn feature_importance(model: &MetaModel) -> Result<Vec<(String, f64)>> {
    if model.learner.is_none() {
        return Err(Error::NotFitted(format!("{} meta-model", model.target)));
    }
    let mut out: Vec<(String, f64)> = model
        .feature_names
        .iter()
        .cloned()
        .zip(model.importance.iter().copied())
        .collect();
    out.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    Ok(out)
}

fn normalize(raw: Vec<f64>) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    if s > 0.0 {
        raw.iter().map(|v| v / s).collect()
    } else {
        // No split anywhere: nothing distinguishes the features.
        vec![1.0 / raw.len() as f64; raw.len()]
    }
}

fn cv_folds(data: &MetaData, n_folds: usize, seed: u64) -> Result<FoldAssignment> {
    let mut counts: BTreeMap<&str, BTreeMap<usize, usize>> = BTreeMap::new();
    for (p, &y) in data.row_patient.iter().zip(data.labels) {
        *counts.entry(p.as_str()).or_default().entry(y).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::InvalidInput("meta CV needs at least two patients".into()));
    }
    // Stratify on each patient's most frequent label.
    let patients: Vec<(String, String)> = counts
        .iter()
        .map(|(p, c)| {
            let modal = c.iter().max_by_key(|(&y, &n)| (n, std::cmp::Reverse(y))).map(|(y, _)| *y).unwrap();
            (p.to_string(), modal.to_string())
        })
        .collect();
    Ok(assign_folds(&patients, n_folds.min(patients.len()), seed)?.0)
}

/// Pooled out-of-fold macro-F1 of `params`, and the mean early-stopped
/// round count.
fn cv_score(
    data: &MetaData,
    k: usize,
    folds: &FoldAssignment,
    params: &GbdtParams,
    inner_val_fraction: f64,
) -> Result<(f64, f64)> {
    let fold_of_row: Vec<usize> = data
        .row_patient
        .iter()
        .map(|p| folds.fold(p).expect("every patient has a fold"))
        .collect();
    let per_fold: Vec<(Vec<usize>, Vec<usize>, usize)> = (0..folds.k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] == f).collect();
            let train: Vec<usize> = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] != f).collect();
            if test.is_empty() || train.is_empty() {
                return Ok((Vec::new(), Vec::new(), 0));
            }
            let seed = params.seed.wrapping_add(f as u64);
            let (fit, val) = carve_validation(&train, data.row_patient, inner_val_fraction, seed);
            let y = |rows: &[usize]| rows.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();
            let xf = data.x.select(Axis(0), &fit);
            let yf = y(&fit);
            let model = if val.is_empty() {
                Gbdt::fit(xf.view(), &yf, k, params, None)?
            } else {
                let xv = data.x.select(Axis(0), &val);
                Gbdt::fit(xf.view(), &yf, k, params, Some((xv.view(), &y(&val))))?
            };
            let pred = argmax_rows(&model.predict_proba(data.x.select(Axis(0), &test).view())?);
            Ok((y(&test), pred, model.n_rounds()))
        })
        .collect::<Result<_>>()?;
    let (mut truth, mut pred, mut rounds, mut used) = (Vec::new(), Vec::new(), 0usize, 0usize);
    for (t, p, r) in per_fold {
        if !t.is_empty() {
            truth.extend(t);
            pred.extend(p);
            rounds += r;
            used += 1;
        }
    }
    Ok((macro_f1(&truth, &pred, k)?, rounds as f64 / used.max(1) as f64))
}

/// Searches the space (TPE, `space.trials` trials) for the parameters with
/// the best patient-grouped CV macro-F1 and refits on all rows. With zero
/// trials the mid-range defaults are fitted directly.
pub fn tune_and_fit_meta(
    target: TaskId,
    data: &MetaData,
    space: &HyperparameterSpace,
    opts: &MetaOptions,
    seed: u64,
) -> Result<MetaModel> {
    space.validate()?;
    let (n, d) = data.x.dim();
    if data.labels.len() != n || data.row_patient.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: data.labels.len().min(data.row_patient.len()),
        });
    }
    if data.feature_names.len() != d {
        return Err(Error::Dimension {
            expected: d,
            actual: data.feature_names.len(),
        });
    }
    let mut model = MetaModel::unfitted(target, data.feature_names.to_vec());
    let k = model.n_classes();
    if let Some(&bad) = data.labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {target}")));
    }
    let mut distinct = data.labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Degenerate(format!(
            "{target} meta labels contain {} class(es)",
            distinct.len()
        )));
    }

    if opts.learner == MetaLearnerKind::Linear {
        let m = LinearModel::fit(data.x, data.labels, k, &LinearParams::default())?;
        model.importance = normalize(m.importance());
        model.learner = Some(MetaLearner::Linear(m));
        return Ok(model);
    }

    let (params, rounds) = if space.trials == 0 {
        let p = space.defaults(seed);
        let r = p.n_estimators;
        (p, r)
    } else {
        let folds = cv_folds(data, opts.cv_folds, seed)?;
        let mut tpe = Tpe::new(space.dims(), seed);
        for number in 0..space.trials {
            let point = tpe.ask();
            let params = space.params_from(&point, seed.wrapping_add(number as u64));
            let (score, mean_rounds) = cv_score(data, k, &folds, &params, opts.inner_val_fraction)?;
            log::debug!("{target} trial {number}: macro-F1 {score:.4}");
            tpe.tell(&HyperparameterSpace::point_of(&params), score);
            model.trials.push(Trial {
                number,
                params,
                cv_macro_f1: score,
                mean_best_rounds: mean_rounds,
            });
        }
        let best = model.best_trial().expect("trials > 0");
        let rounds = (best.mean_best_rounds.round() as usize).max(1);
        (best.params.clone(), rounds)
    };
    let refit = GbdtParams {
        n_estimators: rounds,
        ..params.clone()
    };
    let m = Gbdt::fit(data.x, data.labels, k, &refit, None)?;
    model.importance = normalize(m.gain_importance());
    model.learner = Some(MetaLearner::Boosted(m));
    model.params = Some(params);
    model.refit_rounds = Some(rounds);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stacker::MetaWidth;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Meta rows where only the sp columns carry the label; sex is constant.
    fn planted(n_patients: usize, seed: u64) -> (Array2<f64>, Vec<usize>, Vec<String>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let (mut y, mut pid) = (Vec::new(), Vec::new());
        for p in 0..n_patients {
            for _ in 0..6 {
                let c = rng.gen_range(0..3);
                let mut sp = [rng.gen::<f64>() * 0.3, rng.gen::<f64>() * 0.3, rng.gen::<f64>() * 0.3];
                sp[c] += 0.6;
                let s: f64 = sp.iter().sum();
                let dg: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
                let ds: f64 = dg.iter().sum();
                let mut r = sp.iter().map(|v| v / s).collect::<Vec<_>>();
                r.push(rng.gen());
                r.extend(dg.iter().map(|v| v / ds));
                r.push(rng.gen_range(0.5..16.0));
                r.push(1.0);
                r.push(rng.gen_range(1..=4) as f64);
                rows.extend(r);
                y.push(c);
                pid.push(format!("p{p:03}"));
            }
        }
        (Array2::from_shape_vec((y.len(), 11), rows).unwrap(), y, pid)
    }

    fn names() -> Vec<String> {
        MetaWidth::Eleven.feature_names().iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn trials_stay_in_space_and_signal_ranks_first() {
        let (x, y, pid) = planted(40, 1);
        let names = names();
        let data = MetaData {
            x: x.view(),
            labels: &y,
            row_patient: &pid,
            feature_names: &names,
        };
        let space = HyperparameterSpace::default().with_trials(12);
        let m = tune_and_fit_meta(TaskId::SoundPattern, &data, &space, &MetaOptions::default(), 3).unwrap();
        assert_eq!(m.trials.len(), 12);
        assert!(m.trials.iter().all(|t| space.contains(&t.params)));
        let imp = feature_importance(&m).unwrap();
        assert!((imp.iter().map(|f| f.1).sum::<f64>() - 1.0).abs() < 1e-9);
        let top: Vec<&str> = imp[..3].iter().map(|f| f.0.as_str()).collect();
        assert!(top.iter().all(|n| n.starts_with("sp_")), "{imp:?}");
        assert_eq!(imp.iter().find(|f| f.0 == "sex").unwrap().1, 0.0);
        for r in m.predict_proba(x.view()).unwrap().rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_trials_uses_defaults_deterministically() {
        let (x, y, pid) = planted(20, 2);
        let names = names();
        let data = MetaData {
            x: x.view(),
            labels: &y,
            row_patient: &pid,
            feature_names: &names,
        };
        let space = HyperparameterSpace::default().with_trials(0);
        let a = tune_and_fit_meta(TaskId::SoundPattern, &data, &space, &MetaOptions::default(), 5).unwrap();
        let b = tune_and_fit_meta(TaskId::SoundPattern, &data, &space, &MetaOptions::default(), 5).unwrap();
        assert_eq!(a, b);
        let p = a.params.unwrap();
        assert_eq!((p.n_estimators, p.max_depth, p.num_leaves, p.min_child_samples), (275, 9, 157, 52));
        assert!((p.learning_rate - 0.003f64.sqrt()).abs() < 1e-15);
        assert!(a.trials.is_empty());
    }

    #[test]
    fn degenerate_and_unfitted_errors() {
        let (x, _, pid) = planted(5, 3);
        let y = vec![1; x.nrows()];
        let names = names();
        let data = MetaData {
            x: x.view(),
            labels: &y,
            row_patient: &pid,
            feature_names: &names,
        };
        let r = tune_and_fit_meta(TaskId::SoundPattern, &data, &HyperparameterSpace::default(), &MetaOptions::default(), 0);
        assert!(matches!(r, Err(Error::Degenerate(_))));
        let m = MetaModel::unfitted(TaskId::Screening, names);
        assert!(matches!(feature_importance(&m), Err(Error::NotFitted(_))));
        assert!(m.predict_proba(x.view()).is_err());
    }

    #[test]
    fn linear_fallback_fits_and_ranks() {
        let (x, y, pid) = planted(30, 4);
        let names = names();
        let data = MetaData {
            x: x.view(),
            labels: &y,
            row_patient: &pid,
            feature_names: &names,
        };
        let opts = MetaOptions {
            learner: MetaLearnerKind::Linear,
            ..Default::default()
        };
        let m = tune_and_fit_meta(TaskId::SoundPattern, &data, &HyperparameterSpace::default(), &opts, 0).unwrap();
        let imp = feature_importance(&m).unwrap();
        assert!(imp[..3].iter().all(|f| f.0.starts_with("sp_")), "{imp:?}");
        assert_eq!(imp.last().unwrap().1, 0.0);
    }
}
