//! One function per pipeline command. Each reads its upstream artifacts from
//! the run directory and records what it wrote in the manifest.

use std::collections::BTreeMap;
use std::path::Path;

use lungstack_core::corpus::{curate, ingest_corpus, split_cohort, write_layout, CohortSplit, Corpus, SplitWarning};
use lungstack_core::encoder::EmbeddingCache;
use lungstack_core::heads::TaskInputs;
use lungstack_core::metrics::{evaluate as evaluate_report, BootstrapConfig, MetricReport};
use lungstack_core::pipeline::{build_clips, embed_corpus, split_rows, EventRow};
use lungstack_core::stacker::{feature_importance, write_oof_table, MetaModel};
use lungstack_core::synth::{synth_cohort, SynthManifest, SynthSpec};
use lungstack_core::tasks::TaskId;
use lungstack_core::workflow::{
    aggregate as aggregate_patients, event_meta, fit_meta, meta_matrix, patient_groups, patient_truth, row_labels,
    train_base, training_folds,
};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_json, read_matrix, write_json, write_matrix, ProbTable};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{Input, Outcome, RunDir};

pub const CORPUS: &str = "corpus.json";
pub const CURATION: &str = "curation.json";
pub const SPLIT: &str = "split.json";
pub const CLIPS: &str = "clips.csv";
pub const ROWS: &str = "rows.json";
pub const EMBEDDINGS: &str = "embeddings.bin";
pub const FEATURES: &str = "features.bin";
pub const EMBED_INFO: &str = "embed.json";
pub const FOLDS: &str = "folds.json";
pub const OOF: &str = "oof.csv";

pub fn base_model(t: TaskId) -> String {
    format!("base/{t}.model.json")
}
pub fn base_oof(t: TaskId) -> String {
    format!("base/{t}.oof.csv")
}
pub fn base_test(t: TaskId) -> String {
    format!("base/{t}.test.csv")
}
pub fn meta_model(t: TaskId) -> String {
    format!("meta/{t}.model.json")
}
pub fn meta_test(t: TaskId) -> String {
    format!("meta/{t}.test.csv")
}
pub fn predictions(t: TaskId) -> String {
    format!("predictions/{t}.csv")
}
pub fn eval_file(level: Level, name: &str) -> String {
    format!("eval/{}-{name}.json", level.as_str())
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub run: RunDir,
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Level {
    Event,
    Patient,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Event => "event",
            Level::Patient => "patient",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SplitDoc {
    split: CohortSplit,
    warnings: Vec<SplitWarning>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbedInfo {
    backend_id: String,
    version: u32,
    rows: usize,
    dim: usize,
    feature_dim: Option<usize>,
}

fn class_names(t: TaskId) -> Vec<String> {
    t.taxonomy().class_order
}

// ------------------------------------------------------------------ loaders

pub fn load_corpus(run: &RunDir) -> CliResult<Corpus> {
    let c: Corpus = read_json(&run.path(CORPUS))?;
    // Re-validate references after the round trip.
    Ok(Corpus::new(c.patients().to_vec(), c.records().to_vec(), c.events().to_vec())?)
}

pub fn load_split(run: &RunDir) -> CliResult<CohortSplit> {
    Ok(read_json::<SplitDoc>(&run.path(SPLIT))?.split)
}

pub fn load_rows(run: &RunDir) -> CliResult<Vec<EventRow>> {
    read_json(&run.path(ROWS))
}

fn load_inputs(run: &RunDir) -> CliResult<TaskInputs> {
    let embeddings = read_matrix(&run.path(EMBEDDINGS))?;
    let fp = run.path(FEATURES);
    let features = if fp.exists() { Some(read_matrix(&fp)?) } else { None };
    Ok(TaskInputs { embeddings, features })
}

/// Reads a probability table and checks its rows are `rows[subset]`.
fn load_probs(run: &RunDir, rel: &str, rows: &[EventRow], subset: &[usize], n_keys: usize) -> CliResult<Array2<f64>> {
    let t = ProbTable::read(&run.path(rel), n_keys)?;
    if t.keys.len() != subset.len() || t.keys.iter().zip(subset).any(|(k, &i)| k[0] != rows[i].event_id) {
        return Err(CliError::Data(format!(
            "{rel} does not match the embedded rows; rerun the stage that wrote it"
        )));
    }
    Ok(t.probs)
}

fn views(m: &BTreeMap<TaskId, Array2<f64>>) -> BTreeMap<TaskId, ArrayView2<'_, f64>> {
    m.iter().map(|(t, a)| (*t, a.view())).collect()
}

fn row_keys(rows: &[EventRow], subset: &[usize]) -> Vec<Vec<String>> {
    subset
        .iter()
        .map(|&i| vec![rows[i].event_id.clone(), rows[i].patient_id.clone()])
        .collect()
}

fn test_table(rows: &[EventRow], subset: &[usize], t: TaskId, probs: Array2<f64>) -> ProbTable {
    ProbTable {
        key_names: vec!["event_id".into(), "patient_id".into()],
        keys: row_keys(rows, subset),
        class_names: class_names(t),
        probs,
    }
}

fn rows_split(run: &RunDir) -> CliResult<(Vec<EventRow>, Vec<usize>, Vec<usize>)> {
    let rows = load_rows(run)?;
    let split = load_split(run)?;
    let (train, test) = split_rows(&rows, |p| split.is_test(p));
    Ok((rows, train, test))
}

// ------------------------------------------------------------------ synth

/// Writes a synthetic cohort in the native layout plus its ground truth.
/// Not tied to a run directory; rerunning with the same spec is a no-op.
pub fn synth(out: &Path, spec: &SynthSpec, force: bool) -> CliResult<()> {
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let truth_path = out.join("truth.json");
    if !force && truth_path.exists() {
        let prev: SynthManifest = read_json(&truth_path)?;
        if &prev.spec == spec {
            println!("synth: up to date");
            return Ok(());
        }
        return Err(CliError::Config(format!(
            "{} holds a cohort from a different spec; pass --force to overwrite",
            out.display()
        )));
    }
    let cohort = synth_cohort(spec)?;
    write_layout(&cohort.corpus, out)?;
    write_json(&truth_path, &cohort.manifest)?;
    println!(
        "synth: {} patients, {} events -> {}",
        cohort.corpus.patients().len(),
        cohort.corpus.events().len(),
        out.display()
    );
    Ok(())
}

// ------------------------------------------------------------------ ingest

pub fn ingest(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let args = vec![format!("adapter={:?}", cfg.adapter).to_lowercase()];
    cx.run.stage("ingest", args, cfg.seed, &[Input::External(&cfg.data_root)], cx.force, |run| {
        let raw = ingest_corpus(&cfg.data_root, cfg.adapter)?;
        let (corpus, report) = curate(&raw)?;
        if corpus.is_empty() {
            return Err(CliError::Data(format!("no usable records under {}", cfg.data_root.display())));
        }
        log::info!(
            "curated {} -> {} events ({} duplicates, {} poor quality, {} unannotated)",
            raw.events().len(),
            corpus.events().len(),
            report.duplicates.len(),
            report.poor_quality.len(),
            report.unannotated.len()
        );
        write_json(&run.path(CORPUS), &corpus)?;
        write_json(&run.path(CURATION), &report)?;
        Ok(vec![run.path(CORPUS), run.path(CURATION)])
    })
}

// ------------------------------------------------------------------ preprocess

pub fn preprocess(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let inputs = [Input::Artifact(CORPUS, "ingest")];
    cx.run.stage("preprocess", vec![], cfg.seed, &inputs, cx.force, |run| {
        let corpus = load_corpus(run)?;
        let (split, warnings) = split_cohort(&corpus, cfg.split.test_fraction, &cfg.split.strata, cfg.seed)?;
        for w in &warnings {
            log::warn!("split: {}", w.message);
        }
        let clips = build_clips(&corpus, &cfg.clips)?;
        let mut w = csv::Writer::from_path(run.path(CLIPS))?;
        w.write_record(["event_id", "patient_id", "record_id", "label", "location", "split", "clip_key", "overlap"])?;
        for b in &clips {
            let e = &corpus.events()[b.event_index];
            let pid = &corpus.patient_of_event(e).patient_id;
            w.write_record([
                e.event_id(),
                pid.clone(),
                e.record_id.clone(),
                e.label.to_string(),
                e.location.to_string(),
                if split.is_test(pid) { "test" } else { "train" }.to_string(),
                lungstack_core::encoder::clip_key(&b.clip),
                b.overlap.to_string(),
            ])?;
        }
        w.flush()?;
        write_json(&run.path(SPLIT), &SplitDoc { split, warnings })?;
        Ok(vec![run.path(SPLIT), run.path(CLIPS)])
    })
}

// ------------------------------------------------------------------ embed

pub fn embed(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let inputs = [Input::Artifact(CORPUS, "ingest"), Input::Artifact(CLIPS, "preprocess")];
    let backend = cfg.backend()?;
    let args = vec![format!("backend={}@{}", backend.backend_id(), backend.version())];
    cx.run.stage("embed", args, cfg.seed, &inputs, cx.force, |run| {
        let corpus = load_corpus(run)?;
        let cache = EmbeddingCache::open(cfg.cache_dir())?;
        let emb = embed_corpus(&corpus, &cfg.clips, backend.as_ref(), Some(&cache))?;
        log::info!("embedded {} events ({} cached)", emb.rows.len(), emb.cache_hits);

        let mut expected = BTreeMap::new();
        let mut r = csv::Reader::from_path(run.path(CLIPS))?;
        for rec in r.records() {
            let rec = rec?;
            expected.insert(rec[0].to_string(), rec[6].to_string());
        }
        for row in &emb.rows {
            if expected.get(&row.event_id) != Some(&row.clip_key) {
                return Err(CliError::Data(format!(
                    "clip of {} differs from {CLIPS}; rerun `lungstack preprocess`",
                    row.event_id
                )));
            }
        }

        let mut out = vec![run.path(ROWS), run.path(EMBEDDINGS), run.path(EMBED_INFO)];
        write_json(&run.path(ROWS), &emb.rows)?;
        write_matrix(&run.path(EMBEDDINGS), &emb.inputs.embeddings)?;
        if let Some(f) = &emb.inputs.features {
            write_matrix(&run.path(FEATURES), f)?;
            out.push(run.path(FEATURES));
        }
        let info = EmbedInfo {
            backend_id: emb.backend_id.clone(),
            version: backend.version(),
            rows: emb.rows.len(),
            dim: emb.inputs.embeddings.ncols(),
            feature_dim: emb.inputs.features.as_ref().map(|f| f.ncols()),
        };
        write_json(&run.path(EMBED_INFO), &info)?;
        Ok(out)
    })
}

// ------------------------------------------------------------------ train-base

pub fn train(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let inputs = [
        Input::Artifact(CORPUS, "ingest"),
        Input::Artifact(SPLIT, "preprocess"),
        Input::Artifact(ROWS, "embed"),
        Input::Artifact(EMBEDDINGS, "embed"),
    ];
    let backend = cfg.backend()?;
    let args: Vec<String> = cfg.tasks.iter().map(|t| format!("task={t}")).collect();
    cx.run.stage("train-base", args, cfg.seed, &inputs, cx.force, |run| {
        let corpus = load_corpus(run)?;
        let split = load_split(run)?;
        let rows = load_rows(run)?;
        let emb = load_inputs(run)?;
        if emb.len() != rows.len() {
            return Err(CliError::Data(format!("{EMBEDDINGS} and {ROWS} disagree; rerun `lungstack embed`")));
        }
        let st = cfg.stacking_config();
        let (train_rows, test_rows) = split_rows(&rows, |p| split.is_test(p));
        let (folds, _) = training_folds(&corpus, &split, st.k_folds, st.seed)?;
        write_json(&run.path(FOLDS), &folds)?;
        let mut out = vec![run.path(FOLDS)];
        let mut oofs = BTreeMap::new();
        for &task in &cfg.tasks {
            let labels = row_labels(&corpus, &rows, task)?;
            let b = train_base(task, backend.as_ref(), &emb, &rows, &labels, (&train_rows, &test_rows), &folds, &st)?;
            std::fs::create_dir_all(run.path("base"))?;
            b.model.save(&run.path(&base_model(task)))?;
            let mut keys = row_keys(&rows, &train_rows);
            for (k, f) in keys.iter_mut().zip(&b.oof.fold_of_row) {
                k.push(f.to_string());
            }
            ProbTable {
                key_names: vec!["event_id".into(), "patient_id".into(), "fold".into()],
                keys,
                class_names: class_names(task),
                probs: b.oof.probs.clone(),
            }
            .write(&run.path(&base_oof(task)))?;
            test_table(&rows, &test_rows, task, b.test_probs).write(&run.path(&base_test(task)))?;
            out.extend([base_model(task), base_oof(task), base_test(task)].map(|r| run.path(&r)));
            oofs.insert(task, b.oof);
        }
        if TaskId::BASE.iter().all(|t| oofs.contains_key(t)) {
            let ids: Vec<String> = train_rows.iter().map(|&i| rows[i].event_id.clone()).collect();
            let f = std::fs::File::create(run.path(OOF))?;
            write_oof_table(
                f,
                &ids,
                &oofs[&TaskId::Screening].fold_of_row,
                oofs[&TaskId::SoundPattern].probs.view(),
                oofs[&TaskId::Screening].probs.view(),
                oofs[&TaskId::DiseaseGroup].probs.view(),
            )?;
            out.push(run.path(OOF));
        }
        Ok(out)
    })
}

// ------------------------------------------------------------------ stack

pub fn stack(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    if let Some(t) = TaskId::BASE.iter().find(|t| !cfg.tasks.contains(t)) {
        return Err(CliError::Config(format!("stacking needs all three base tasks; `{t}` is not in tasks")));
    }
    let rels: Vec<String> = TaskId::BASE.iter().flat_map(|&t| [base_oof(t), base_test(t)]).collect();
    let mut inputs = vec![
        Input::Artifact(CORPUS, "ingest"),
        Input::Artifact(SPLIT, "preprocess"),
        Input::Artifact(ROWS, "embed"),
    ];
    inputs.extend(rels.iter().map(|r| Input::Artifact(r, "train-base")));
    let args: Vec<String> = cfg.targets.iter().map(|t| format!("target={t}")).collect();
    cx.run.stage("stack", args, cfg.seed, &inputs, cx.force, |run| {
        let corpus = load_corpus(run)?;
        let (rows, train, test) = rows_split(run)?;
        let st = cfg.stacking_config();
        let meta = event_meta(&corpus, &rows)?;
        let pick = |idx: &[usize]| idx.iter().map(|&i| meta[i]).collect::<Vec<_>>();
        let mut oof = BTreeMap::new();
        let mut tst = BTreeMap::new();
        for t in TaskId::BASE {
            oof.insert(t, load_probs(run, &base_oof(t), &rows, &train, 3)?);
            tst.insert(t, load_probs(run, &base_test(t), &rows, &test, 2)?);
        }
        let xtr = meta_matrix(&views(&oof), &pick(&train), st.width)?;
        let xte = meta_matrix(&views(&tst), &pick(&test), st.width)?;
        let train_pid: Vec<String> = train.iter().map(|&i| rows[i].patient_id.clone()).collect();

        std::fs::create_dir_all(run.path("meta"))?;
        let mut out = Vec::new();
        for &target in &cfg.targets {
            let labels = row_labels(&corpus, &rows, target)?;
            let tr: Vec<Option<usize>> = train.iter().map(|&i| labels[i]).collect();
            let m = fit_meta(target, xtr.view(), &tr, &train_pid, xte.view(), &st)?;
            log::info!("{target}: meta-learner fitted over {} trials", m.model.trials.len());
            m.model.save(&run.path(&meta_model(target)))?;
            write_importance(&run.path(&format!("meta/{target}.importance.csv")), &m.model)?;
            write_trials(&run.path(&format!("meta/{target}.trials.csv")), &m.model)?;
            test_table(&rows, &test, target, m.test_probs).write(&run.path(&meta_test(target)))?;
            out.extend(
                [
                    meta_model(target),
                    format!("meta/{target}.importance.csv"),
                    format!("meta/{target}.trials.csv"),
                    meta_test(target),
                ]
                .map(|r| run.path(&r)),
            );
        }
        Ok(out)
    })
}

fn write_importance(path: &Path, m: &MetaModel) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature", "importance"])?;
    for (f, v) in feature_importance(m)? {
        w.write_record([f, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trials(path: &Path, m: &MetaModel) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "trial",
        "cv_macro_f1",
        "mean_best_rounds",
        "n_estimators",
        "max_depth",
        "learning_rate",
        "num_leaves",
        "min_child_samples",
        "subsample",
        "colsample",
    ])?;
    for t in &m.trials {
        let p = &t.params;
        w.write_record([
            t.number.to_string(),
            t.cv_macro_f1.to_string(),
            t.mean_best_rounds.to_string(),
            p.n_estimators.to_string(),
            p.max_depth.to_string(),
            p.learning_rate.to_string(),
            p.num_leaves.to_string(),
            p.min_child_samples.to_string(),
            p.subsample.to_string(),
            p.colsample.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ------------------------------------------------------------------ aggregate

fn patient_targets(cfg: &RunConfig) -> CliResult<Vec<TaskId>> {
    let t: Vec<TaskId> = cfg.targets.iter().copied().filter(|t| t.is_patient_level()).collect();
    if t.is_empty() {
        return Err(CliError::Config(
            "patient-level steps need disease_group or disease_16 among targets".into(),
        ));
    }
    Ok(t)
}

/// Patient predictions table: id, class probabilities, hard class, gate.
pub struct PatientTable {
    pub patient_ids: Vec<String>,
    pub class_names: Vec<String>,
    pub probs: Array2<f64>,
    pub gate_active: Vec<bool>,
}

impl PatientTable {
    fn write(&self, path: &Path) -> CliResult<()> {
        std::fs::create_dir_all(path.parent().expect("nested path"))?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["patient_id".to_string()];
        header.extend(self.class_names.iter().cloned());
        header.extend(["class".into(), "gate_active".into()]);
        w.write_record(&header)?;
        for (i, pid) in self.patient_ids.iter().enumerate() {
            let row = self.probs.row(i);
            let cls = lungstack_core::metrics::argmax(row.iter().copied());
            let mut rec = vec![pid.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            rec.extend([self.class_names[cls].clone(), self.gate_active[i].to_string()]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 4 {
            return Err(CliError::Data(format!("{}: malformed predictions table", path.display())));
        }
        let k = header.len() - 3;
        let (mut ids, mut data, mut gate) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            ids.push(rec[0].to_string());
            for v in rec.iter().skip(1).take(k) {
                data.push(v.parse::<f64>().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?);
            }
            gate.push(&rec[k + 2] == "true");
        }
        Ok(PatientTable {
            class_names: header[1..=k].to_vec(),
            probs: Array2::from_shape_vec((ids.len(), k), data).map_err(|e| CliError::Data(e.to_string()))?,
            patient_ids: ids,
            gate_active: gate,
        })
    }
}

pub fn aggregate(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let targets = patient_targets(&cfg)?;
    let rels: Vec<String> = targets.iter().map(|&t| meta_test(t)).collect();
    let mut inputs = vec![Input::Artifact(SPLIT, "preprocess"), Input::Artifact(ROWS, "embed")];
    inputs.extend(rels.iter().map(|r| Input::Artifact(r, "stack")));
    let args = vec![serde_json::to_string(&cfg.voting)?];
    cx.run.stage("aggregate", args, cfg.seed, &inputs, cx.force, |run| {
        let (rows, _, test) = rows_split(run)?;
        let mut out = Vec::new();
        for &t in &targets {
            let probs = load_probs(run, &meta_test(t), &rows, &test, 2)?;
            let preds = aggregate_patients(probs.view(), &rows, &test, &cfg.voting)?;
            let k = probs.ncols();
            let table = PatientTable {
                patient_ids: preds.iter().map(|p| p.patient_id.clone()).collect(),
                class_names: class_names(t),
                probs: Array2::from_shape_fn((preds.len(), k), |(i, c)| preds[i].probs[c]),
                gate_active: preds.iter().map(|p| p.trace.gate.active).collect(),
            };
            table.write(&run.path(&predictions(t)))?;
            log::info!(
                "{t}: {} patients, gate active for {}",
                preds.len(),
                table.gate_active.iter().filter(|&&g| g).count()
            );
            out.push(run.path(&predictions(t)));
        }
        Ok(out)
    })
}

// ------------------------------------------------------------------ evaluate

/// One evaluable prediction set: name, truth and probabilities with the
/// patient grouping used for resampling.
pub struct EvalItem {
    pub name: String,
    pub class_names: Vec<String>,
    pub truth: Vec<usize>,
    pub probs: Array2<f64>,
    pub groups: Vec<Vec<usize>>,
}

fn labelled(
    name: String,
    t: TaskId,
    labels: &[Option<usize>],
    rows: &[EventRow],
    test: &[usize],
    probs: Array2<f64>,
) -> EvalItem {
    let keep: Vec<usize> = (0..test.len()).filter(|&j| labels[test[j]].is_some()).collect();
    let kept_rows: Vec<usize> = keep.iter().map(|&j| test[j]).collect();
    EvalItem {
        name,
        class_names: class_names(t),
        truth: kept_rows.iter().map(|&i| labels[i].unwrap()).collect(),
        probs: probs.select(ndarray::Axis(0), &keep),
        groups: patient_groups(rows, &kept_rows).into_iter().map(|(_, g)| g).collect(),
    }
}

/// Evaluation inputs available for `level` under the current config.
pub fn eval_items(run: &RunDir, cfg: &RunConfig, level: Level) -> CliResult<Vec<EvalItem>> {
    let corpus = load_corpus(run)?;
    let (rows, _, test) = rows_split(run)?;
    let mut items = Vec::new();
    match level {
        Level::Event => {
            for &t in &cfg.tasks {
                let labels = row_labels(&corpus, &rows, t)?;
                let p = load_probs(run, &base_test(t), &rows, &test, 2)?;
                items.push(labelled(format!("base-{t}"), t, &labels, &rows, &test, p));
            }
            for &t in &cfg.targets {
                let labels = row_labels(&corpus, &rows, t)?;
                let p = load_probs(run, &meta_test(t), &rows, &test, 2)?;
                items.push(labelled(format!("meta-{t}"), t, &labels, &rows, &test, p));
            }
        }
        Level::Patient => {
            for t in patient_targets(cfg)? {
                let table = PatientTable::read(&run.path(&predictions(t)))?;
                items.push(EvalItem {
                    name: format!("meta-{t}"),
                    class_names: table.class_names.clone(),
                    truth: patient_truth(&corpus, t, &table.patient_ids)?,
                    groups: (0..table.patient_ids.len()).map(|i| vec![i]).collect(),
                    probs: table.probs,
                });
            }
        }
    }
    Ok(items)
}

pub fn eval_report(item: &EvalItem, boot: Option<&BootstrapConfig>) -> CliResult<MetricReport> {
    Ok(evaluate_report(
        &item.truth,
        item.probs.view(),
        &item.class_names,
        boot.map(|b| (item.groups.as_slice(), b)),
    )?)
}

fn level_inputs(cfg: &RunConfig, level: Level) -> CliResult<Vec<(String, &'static str)>> {
    let mut v = vec![(CORPUS.to_string(), "ingest"), (SPLIT.to_string(), "preprocess"), (ROWS.to_string(), "embed")];
    match level {
        Level::Event => {
            v.extend(cfg.tasks.iter().map(|&t| (base_test(t), "train-base")));
            v.extend(cfg.targets.iter().map(|&t| (meta_test(t), "stack")));
        }
        Level::Patient => v.extend(patient_targets(cfg)?.into_iter().map(|t| (predictions(t), "aggregate"))),
    }
    Ok(v)
}

pub fn evaluate(cx: &mut Ctx, level: Level, replicates: usize, seed: u64) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let rels = level_inputs(&cfg, level)?;
    let inputs: Vec<Input> = rels.iter().map(|(r, c)| Input::Artifact(r, c)).collect();
    let args = vec![format!("level={}", level.as_str()), format!("bootstrap={replicates}"), format!("seed={seed}")];
    let boot = (replicates > 0).then_some(BootstrapConfig { replicates, seed });
    cx.run.stage("evaluate", args, seed, &inputs, cx.force, |run| {
        let mut out = Vec::new();
        for item in eval_items(run, &cfg, level)? {
            let report = eval_report(&item, boot.as_ref())?;
            let path = run.path(&eval_file(level, &item.name));
            write_json(&path, &report)?;
            println!(
                "{:>7} {:<22} n={:<5} accuracy {:.3}  macro-F1 {:.3}  macro ROC-AUC {}",
                level.as_str(),
                item.name,
                report.n_samples,
                report.accuracy.value.unwrap_or(f64::NAN),
                report.macro_f1.value.unwrap_or(f64::NAN),
                report.macro_roc_auc.value.map_or("n/a".into(), |v| format!("{v:.3}")),
            );
            out.push(path);
        }
        Ok(out)
    })
}
