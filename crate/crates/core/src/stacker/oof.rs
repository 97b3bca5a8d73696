//! Out-of-fold probabilities with an exhaustive leakage audit.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FoldAssignment;
use crate::encoder::EncoderBackend;
use crate::error::{Error, Result};
use crate::heads::{train_two_stage, HeadConfig, TaskInputs, TrainedTaskModel, TrainingSchedule};
use crate::tasks::TaskId;

/// Something that can be trained on some rows and score others.
pub trait BaseLearner: Sync {
    fn n_classes(&self) -> usize;
    fn fit_predict(&self, fold: usize, train_rows: &[usize], score_rows: &[usize]) -> Result<Array2<f64>>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub row: usize,
    pub fold: usize,
    /// Folds whose rows trained the model that scored this row.
    pub training_folds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OofResult {
    pub probs: Array2<f64>,
    pub fold_of_row: Vec<usize>,
    pub audit: Vec<AuditEntry>,
}

/// For each fold f, trains on rows of the other folds and scores rows of f.
/// `row_patient[i]` is the patient of row i.
pub fn generate_oof(row_patient: &[String], folds: &FoldAssignment, learner: &dyn BaseLearner) -> Result<OofResult> {
    let fold_of_row: Vec<usize> = row_patient
        .iter()
        .map(|p| {
            folds
                .fold(p)
                .ok_or_else(|| Error::InvalidInput(format!("patient {p} has no fold")))
        })
        .collect::<Result<_>>()?;
    let k = folds.k;
    let per_fold: Vec<(Vec<usize>, Array2<f64>, Vec<usize>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let score: Vec<usize> = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] == f).collect();
            let train: Vec<usize> = (0..fold_of_row.len()).filter(|&i| fold_of_row[i] != f).collect();
            let mut training_folds: Vec<usize> = train.iter().map(|&i| fold_of_row[i]).collect();
            training_folds.sort_unstable();
            training_folds.dedup();
            if score.is_empty() {
                return Ok((score, Array2::zeros((0, learner.n_classes())), training_folds));
            }
            let p = learner
                .fit_predict(f, &train, &score)
                .map_err(|e| Error::FoldFailed {
                    fold: f,
                    source: Box::new(e),
                })?;
            if p.dim() != (score.len(), learner.n_classes()) {
                return Err(Error::FoldFailed {
                    fold: f,
                    source: Box::new(Error::Dimension {
                        expected: score.len(),
                        actual: p.nrows(),
                    }),
                });
            }
            Ok((score, p, training_folds))
        })
        .collect::<Result<_>>()?;

    let mut probs = Array2::from_elem((fold_of_row.len(), learner.n_classes()), f64::NAN);
    let mut audit = Vec::with_capacity(fold_of_row.len());
    for (rows, p, training_folds) in per_fold {
        for (j, &i) in rows.iter().enumerate() {
            probs.row_mut(i).assign(&p.row(j));
            audit.push(AuditEntry {
                row: i,
                fold: fold_of_row[i],
                training_folds: training_folds.clone(),
            });
        }
    }
    audit.sort_by_key(|a| a.row);
    Ok(OofResult {
        probs,
        fold_of_row,
        audit,
    })
}

/// Exhaustive check: every row scored exactly once, by a model that never
/// saw the row's fold.
pub fn audit_oof(oof: &OofResult) -> Result<()> {
    if oof.audit.len() != oof.fold_of_row.len() {
        return Err(Error::Integrity(format!(
            "{} audit entries for {} rows",
            oof.audit.len(),
            oof.fold_of_row.len()
        )));
    }
    for (i, a) in oof.audit.iter().enumerate() {
        if a.row != i {
            return Err(Error::Integrity(format!("row {i} missing or scored twice")));
        }
        if a.fold != oof.fold_of_row[i] || a.training_folds.contains(&a.fold) {
            return Err(Error::Integrity(format!("row {i} of fold {} leaked into its scorer", a.fold)));
        }
        if oof.probs.row(i).iter().any(|v| !v.is_finite()) {
            return Err(Error::Integrity(format!("row {i} has no probability vector")));
        }
    }
    Ok(())
}

/// Splits training rows into (fit, validation) by holding out about
/// `fraction` of their patients.
pub fn carve_validation(rows: &[usize], row_patient: &[String], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut patients: Vec<&str> = rows.iter().map(|&i| row_patient[i].as_str()).collect();
    patients.sort_unstable();
    patients.dedup();
    let n_val = ((patients.len() as f64 * fraction).round() as usize).min(patients.len().saturating_sub(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let val: std::collections::HashSet<&str> = patients[..n_val].iter().copied().collect();
    rows.iter().partition(|&&i| !val.contains(row_patient[i].as_str()))
}

/// Base learner backed by a task head trained with the two-phase schedule.
pub struct HeadLearner<'a> {
    pub task: TaskId,
    pub config: HeadConfig,
    pub schedule: TrainingSchedule,
    pub backend: &'a dyn EncoderBackend,
    pub inputs: &'a TaskInputs,
    pub labels: &'a [usize],
    pub row_patient: &'a [String],
    /// Share of training patients held out for early stopping.
    pub val_fraction: f64,
}

impl HeadLearner<'_> {
    /// Trains on `rows`, holding out `val_fraction` of their patients for
    /// early stopping.
    pub fn fit(&self, rows: &[usize], seed: u64) -> Result<TrainedTaskModel> {
        let (fit, val) = carve_validation(rows, self.row_patient, self.val_fraction, seed);
        let y = |rows: &[usize]| rows.iter().map(|&i| self.labels[i]).collect::<Vec<_>>();
        let sched = TrainingSchedule {
            seed,
            ..self.schedule.clone()
        };
        train_two_stage(
            self.task,
            &self.config,
            &sched,
            self.backend,
            &self.inputs.select(&fit),
            &y(&fit),
            &self.inputs.select(&val),
            &y(&val),
        )
    }
}

impl BaseLearner for HeadLearner<'_> {
    fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    fn fit_predict(&self, fold: usize, train_rows: &[usize], score_rows: &[usize]) -> Result<Array2<f64>> {
        let model = self.fit(train_rows, self.schedule.seed.wrapping_add(fold as u64 + 1))?;
        model.predict(&self.inputs.select(score_rows))
    }
}

#[cfg(test)]
mod tests {
    use super::super::assign_folds;
    use super::*;

    /// Memorizes training rows: exact one-hot on rows it has seen, uniform otherwise.
    struct Memorizer {
        labels: Vec<usize>,
    }

    impl BaseLearner for Memorizer {
        fn n_classes(&self) -> usize {
            2
        }
        fn fit_predict(&self, _: usize, train: &[usize], score: &[usize]) -> Result<Array2<f64>> {
            Ok(Array2::from_shape_fn((score.len(), 2), |(j, c)| {
                if train.contains(&score[j]) {
                    (self.labels[score[j]] == c) as u8 as f64
                } else {
                    0.5
                }
            }))
        }
    }

    struct Failing;
    impl BaseLearner for Failing {
        fn n_classes(&self) -> usize {
            2
        }
        fn fit_predict(&self, fold: usize, _: &[usize], s: &[usize]) -> Result<Array2<f64>> {
            if fold == 1 {
                Err(Error::Degenerate("boom".into()))
            } else {
                Ok(Array2::from_elem((s.len(), 2), 0.5))
            }
        }
    }

    fn setup() -> (Vec<String>, FoldAssignment) {
        let patients: Vec<(String, String)> = (0..10).map(|i| (format!("p{i}"), "g".into())).collect();
        let (f, _) = assign_folds(&patients, 2, 0).unwrap();
        let rows: Vec<String> = (0..30).map(|i| format!("p{}", i % 10)).collect();
        (rows, f)
    }

    #[test]
    fn oof_never_sees_its_own_rows() {
        let (rows, f) = setup();
        let learner = Memorizer {
            labels: (0..30).map(|i| i % 2).collect(),
        };
        let oof = generate_oof(&rows, &f, &learner).unwrap();
        audit_oof(&oof).unwrap();
        // A memorizer scored out of fold is uninformative.
        assert!(oof.probs.iter().all(|&v| v == 0.5));
        // Resubstitution would have been perfect.
        let all: Vec<usize> = (0..30).collect();
        let resub = learner.fit_predict(0, &all, &all).unwrap();
        assert!(resub.iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn tampered_audit_fails() {
        let (rows, f) = setup();
        let mut oof = generate_oof(&rows, &f, &Memorizer { labels: vec![0; 30] }).unwrap();
        let fold = oof.audit[3].fold;
        oof.audit[3].training_folds.push(fold);
        assert!(audit_oof(&oof).is_err());
    }

    #[test]
    fn fold_failure_names_fold() {
        let (rows, f) = setup();
        match generate_oof(&rows, &f, &Failing) {
            Err(Error::FoldFailed { fold, .. }) => assert_eq!(fold, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_carve_is_patient_level() {
        let rows: Vec<String> = (0..40).map(|i| format!("p{}", i % 20)).collect();
        let all: Vec<usize> = (0..40).collect();
        let (fit, val) = carve_validation(&all, &rows, 0.1, 5);
        assert_eq!(val.len(), 4);
        for v in &val {
            assert!(fit.iter().all(|f| rows[*f] != rows[*v]));
        }
    }
}
