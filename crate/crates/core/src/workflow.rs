//! Stage functions chaining base heads, out-of-fold stacking and patient
//! aggregation over an embedded corpus. Artifact persistence is left to the
//! caller.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::aggregator::{aggregate_patients, PatientPrediction, VotingConfig};
use crate::corpus::{CohortSplit, Corpus, Stratum};
use crate::encoder::EncoderBackend;
use crate::error::{Error, Result};
use crate::heads::{HeadConfig, TaskInputs, TrainedTaskModel, TrainingSchedule};
use crate::pipeline::EventRow;
use crate::stacker::{
    assemble_meta_features, assign_folds, audit_oof, generate_oof, tune_and_fit_meta, EventMeta, FoldAssignment,
    HeadLearner, HyperparameterSpace, MetaData, MetaModel, MetaOptions, MetaWidth, OofResult,
};
use crate::tasks::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingConfig {
    pub k_folds: usize,
    /// Share of training patients held out for head early stopping.
    pub val_fraction: f64,
    pub schedule: TrainingSchedule,
    pub width: MetaWidth,
    pub space: HyperparameterSpace,
    pub meta: MetaOptions,
    pub seed: u64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        StackingConfig {
            k_folds: 5,
            val_fraction: 0.1,
            schedule: TrainingSchedule::default(),
            width: MetaWidth::Eleven,
            space: HyperparameterSpace::default(),
            meta: MetaOptions::default(),
            seed: 0,
        }
    }
}

/// Labels of `task` for each embedded row.
pub fn row_labels(corpus: &Corpus, rows: &[EventRow], task: TaskId) -> Result<Vec<Option<usize>>> {
    let tax = task.taxonomy();
    let events = corpus.events();
    rows.iter()
        .map(|r| {
            let e = &events[r.event_index];
            task.label(&tax, e, corpus.patient_of_event(e))
        })
        .collect()
}

/// Age, sex and location of each row's event.
pub fn event_meta(corpus: &Corpus, rows: &[EventRow]) -> Result<Vec<EventMeta>> {
    rows.iter()
        .map(|r| {
            let p = corpus
                .patient(&r.patient_id)
                .ok_or_else(|| Error::Integrity(format!("row {} has unknown patient {}", r.event_id, r.patient_id)))?;
            Ok(EventMeta {
                age: p.age,
                sex: p.sex,
                location: r.location,
            })
        })
        .collect()
}

/// Disease-group-stratified folds over the split's training patients.
pub fn training_folds(corpus: &Corpus, split: &CohortSplit, k: usize, seed: u64) -> Result<(FoldAssignment, Vec<String>)> {
    let patients: Vec<(String, String)> = corpus
        .patients()
        .iter()
        .filter(|p| split.train_patient_ids.contains(&p.patient_id))
        .map(|p| (p.patient_id.clone(), Stratum::DiseaseGroup.key(p)))
        .collect();
    assign_folds(&patients, k, seed)
}

/// `(patient_id, positions)` for the given rows, positions indexing `subset`.
pub fn patient_groups(rows: &[EventRow], subset: &[usize]) -> Vec<(String, Vec<usize>)> {
    let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (pos, &i) in subset.iter().enumerate() {
        out.entry(rows[i].patient_id.as_str()).or_default().push(pos);
    }
    out.into_iter().map(|(p, v)| (p.to_string(), v)).collect()
}

pub struct BaseRun {
    pub task: TaskId,
    /// Fitted on all training rows; scores the test rows.
    pub model: TrainedTaskModel,
    /// Out-of-fold probabilities, aligned with the training rows.
    pub oof: OofResult,
    pub test_probs: Array2<f64>,
}

/// Base-task stage: audited OOF probabilities for the training rows and a
/// final head, trained on every training row, scoring the test rows.
pub fn train_base(
    task: TaskId,
    backend: &dyn EncoderBackend,
    inputs: &TaskInputs,
    rows: &[EventRow],
    labels: &[Option<usize>],
    split_rows: (&[usize], &[usize]),
    folds: &FoldAssignment,
    cfg: &StackingConfig,
) -> Result<BaseRun> {
    let (train_rows, test_rows) = split_rows;
    let sub = inputs.select(train_rows);
    let sub_labels = crate::pipeline::require_labels(labels, train_rows)?;
    let sub_pid: Vec<String> = train_rows.iter().map(|&i| rows[i].patient_id.clone()).collect();
    let schedule = TrainingSchedule {
        seed: cfg.seed,
        ..cfg.schedule.clone()
    };
    let learner = HeadLearner {
        task,
        config: HeadConfig::new(task.taxonomy().n_classes()),
        schedule,
        backend,
        inputs: &sub,
        labels: &sub_labels,
        row_patient: &sub_pid,
        val_fraction: cfg.val_fraction,
    };
    let oof = generate_oof(&sub_pid, folds, &learner)?;
    audit_oof(&oof)?;
    let all: Vec<usize> = (0..sub.len()).collect();
    let model = learner.fit(&all, cfg.seed)?;
    let test_probs = model.predict(&inputs.select(test_rows))?;
    log::info!("{task}: OOF over {} rows, test {} rows", sub.len(), test_rows.len());
    Ok(BaseRun {
        task,
        model,
        oof,
        test_probs,
    })
}

/// Meta-feature matrix from probabilities of the three base tasks.
pub fn meta_matrix(
    probs: &BTreeMap<TaskId, ArrayView2<f64>>,
    meta: &[EventMeta],
    width: MetaWidth,
) -> Result<Array2<f64>> {
    let get = |t: TaskId| {
        probs
            .get(&t)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("missing {t} probabilities")))
    };
    assemble_meta_features(
        get(TaskId::SoundPattern)?,
        get(TaskId::Screening)?,
        get(TaskId::DiseaseGroup)?,
        meta,
        width,
    )
}

pub struct MetaRun {
    pub model: MetaModel,
    /// Meta probabilities for the test rows.
    pub test_probs: Array2<f64>,
}

/// Tunes and fits one meta target on the OOF matrix (rows without a label
/// for the target are dropped) and scores the test matrix.
pub fn fit_meta(
    target: TaskId,
    train_x: ArrayView2<f64>,
    train_labels: &[Option<usize>],
    train_patients: &[String],
    test_x: ArrayView2<f64>,
    cfg: &StackingConfig,
) -> Result<MetaRun> {
    let keep: Vec<usize> = (0..train_labels.len()).filter(|&i| train_labels[i].is_some()).collect();
    let x = train_x.select(Axis(0), &keep);
    let y: Vec<usize> = keep.iter().map(|&i| train_labels[i].unwrap()).collect();
    let pid: Vec<String> = keep.iter().map(|&i| train_patients[i].clone()).collect();
    let names: Vec<String> = cfg.width.feature_names().iter().map(|s| s.to_string()).collect();
    let data = MetaData {
        x: x.view(),
        labels: &y,
        row_patient: &pid,
        feature_names: &names,
    };
    let model = tune_and_fit_meta(target, &data, &cfg.space, &cfg.meta, cfg.seed)?;
    let test_probs = model.predict_proba(test_x)?;
    Ok(MetaRun { model, test_probs })
}

/// Patient-level voting over event probabilities of `subset` rows.
pub fn aggregate(
    probs: ArrayView2<f64>,
    rows: &[EventRow],
    subset: &[usize],
    voting: &VotingConfig,
) -> Result<Vec<PatientPrediction>> {
    if probs.nrows() != subset.len() {
        return Err(Error::Dimension {
            expected: subset.len(),
            actual: probs.nrows(),
        });
    }
    aggregate_patients(probs, &patient_groups(rows, subset), voting)
}

/// Patient truth for a patient-level target.
pub fn patient_truth(corpus: &Corpus, target: TaskId, patient_ids: &[String]) -> Result<Vec<usize>> {
    if !target.is_patient_level() {
        return Err(Error::InvalidInput(format!(
            "{target} is an event-level target; patient truth is undefined"
        )));
    }
    let tax = target.taxonomy();
    patient_ids
        .iter()
        .map(|id| {
            let p = corpus
                .patient(id)
                .ok_or_else(|| Error::InvalidInput(format!("unknown patient {id}")))?;
            match tax.map(p.diagnosis.as_str())? {
                crate::corpus::Target::Class(c) => Ok(c),
                crate::corpus::Target::Excluded => Err(Error::InvalidInput(format!("{id} has no {target} label"))),
            }
        })
        .collect()
}
