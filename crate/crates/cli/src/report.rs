//! `report`: cohort table, metric tables, confusion matrices, ROC/PR points
//! and per-clip figure data, all as plain CSV/JSON for external rendering.

use std::fs;
use std::path::Path;

use lungstack_core::corpus::cohort_statistics;
use lungstack_core::dsp::mel_spectrogram;
use lungstack_core::metrics::{pr_curve, roc_curve, MetricReport, MetricValue};
use lungstack_core::pipeline::record_clips;
use serde::Serialize;

use crate::artifacts::{read_json, write_json, ProbTable};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::manifest::{Input, Outcome, RunDir};
use crate::stages::{
    base_test, eval_file, eval_items, eval_report, load_corpus, load_rows, load_split, meta_test, predictions, Ctx,
    EvalItem, Level, CORPUS, ROWS, SPLIT,
};

const MEL_WINDOW_MS: f64 = 25.0;
const MEL_HOP_MS: f64 = 10.0;

#[derive(Serialize)]
struct IndexEntry {
    level: String,
    name: String,
    /// Whether the tables carry bootstrap intervals from `evaluate`.
    with_intervals: bool,
    files: Vec<String>,
}

#[derive(Serialize)]
struct ClipInfo {
    event_id: String,
    patient_id: String,
    label: String,
    location: String,
    sample_rate: u32,
}

fn cells(v: &MetricValue) -> [String; 3] {
    let f = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    [f(v.value), f(v.lower), f(v.upper)]
}

fn write_metric_tables(dir: &Path, stem: &str, r: &MetricReport) -> CliResult<Vec<String>> {
    let summary = format!("summary-{stem}.csv");
    let mut w = csv::Writer::from_path(dir.join(&summary))?;
    w.write_record(["metric", "value", "lower", "upper"])?;
    for (name, v) in [
        ("accuracy", &r.accuracy),
        ("weighted_f1", &r.weighted_f1),
        ("macro_f1", &r.macro_f1),
        ("mcc", &r.mcc),
        ("brier", &r.brier),
        ("macro_roc_auc", &r.macro_roc_auc),
        ("macro_auprc", &r.macro_auprc),
    ] {
        let [a, b, c] = cells(v);
        w.write_record([name.to_string(), a, b, c])?;
    }
    w.flush()?;

    let per_class = format!("per-class-{stem}.csv");
    let mut w = csv::Writer::from_path(dir.join(&per_class))?;
    let metrics = ["precision", "recall", "specificity", "npv", "f1", "roc_auc"];
    let mut header = vec!["class".to_string(), "support".to_string()];
    for m in metrics {
        header.extend([m.to_string(), format!("{m}_lower"), format!("{m}_upper")]);
    }
    w.write_record(&header)?;
    for c in &r.per_class {
        let mut rec = vec![c.class_name.clone(), c.support.to_string()];
        for v in [&c.precision, &c.recall, &c.specificity, &c.npv, &c.f1, &c.roc_auc] {
            rec.extend(cells(v));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let confusion = format!("confusion-{stem}.csv");
    let mut w = csv::Writer::from_path(dir.join(&confusion))?;
    let mut header = vec!["truth\\predicted".to_string()];
    header.extend(r.class_names.iter().cloned());
    w.write_record(&header)?;
    for (name, row) in r.class_names.iter().zip(&r.confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(vec![summary, per_class, confusion])
}

/// One-vs-rest ROC and PR points per class.
fn write_curves(dir: &Path, stem: &str, item: &EvalItem) -> CliResult<Vec<String>> {
    let roc = format!("roc-{stem}.csv");
    let pr = format!("pr-{stem}.csv");
    let mut wr = csv::Writer::from_path(dir.join(&roc))?;
    let mut wp = csv::Writer::from_path(dir.join(&pr))?;
    wr.write_record(["class", "fpr", "tpr", "threshold"])?;
    wp.write_record(["class", "recall", "precision", "threshold"])?;
    for (c, name) in item.class_names.iter().enumerate() {
        let pos: Vec<bool> = item.truth.iter().map(|&t| t == c).collect();
        if !pos.iter().any(|&p| p) {
            continue;
        }
        let scores: Vec<f64> = item.probs.column(c).to_vec();
        for (a, b, t) in roc_curve(&scores, &pos) {
            wr.write_record([name.clone(), a.to_string(), b.to_string(), t.to_string()])?;
        }
        for (a, b, t) in pr_curve(&scores, &pos) {
            wp.write_record([name.clone(), a.to_string(), b.to_string(), t.to_string()])?;
        }
    }
    wr.flush()?;
    wp.flush()?;
    Ok(vec![roc, pr])
}

fn write_cohort(run: &RunDir, dir: &Path) -> CliResult<Vec<String>> {
    let corpus = load_corpus(run)?;
    let split = load_split(run)?;
    let table = cohort_statistics(&corpus, &split)?;
    write_json(&dir.join("cohort.json"), &table)?;
    let mut w = csv::Writer::from_path(dir.join("cohort.csv"))?;
    w.write_record(["variable", "category", "all", "train", "train_pct", "test", "test_pct"])?;
    let (pa, ptr, pte) = table.patients;
    let (ea, etr, ete) = table.events;
    for (var, a, tr, te) in [("patients", pa, ptr, pte), ("events", ea, etr, ete)] {
        w.write_record([var, "total", &a.to_string(), &tr.to_string(), "", &te.to_string(), ""])?;
    }
    for r in &table.rows {
        w.write_record([
            r.variable.clone(),
            r.category.clone(),
            r.all.to_string(),
            r.train.to_string(),
            r.train_pct.to_string(),
            r.test.to_string(),
            r.test_pct.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("cohort-tests.csv"))?;
    w.write_record(["variable", "test", "statistic", "p_value"])?;
    for t in &table.tests {
        w.write_record([t.variable.clone(), t.test.clone(), t.statistic.to_string(), t.p_value.to_string()])?;
    }
    w.flush()?;
    Ok(vec!["cohort.json".into(), "cohort.csv".into(), "cohort-tests.csv".into()])
}

/// Waveform, mel energies and predicted probabilities for a few test clips,
/// preferring one clip per event label.
fn write_clips(run: &RunDir, cfg: &RunConfig, dir: &Path) -> CliResult<Vec<String>> {
    let corpus = load_corpus(run)?;
    let rows = load_rows(run)?;
    let split = load_split(run)?;
    let test: Vec<usize> = (0..rows.len()).filter(|&i| split.is_test(&rows[i].patient_id)).collect();
    let events = corpus.events();
    let mut chosen: Vec<usize> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (pos, &i) in test.iter().enumerate() {
        if chosen.len() < cfg.report.clips && seen.insert(events[rows[i].event_index].label.as_str()) {
            chosen.push(pos);
        }
    }
    for pos in 0..test.len() {
        if chosen.len() >= cfg.report.clips {
            break;
        }
        if !chosen.contains(&pos) {
            chosen.push(pos);
        }
    }
    chosen.sort_unstable();

    let mut sources: Vec<(String, ProbTable)> = Vec::new();
    for &t in &cfg.tasks {
        sources.push((format!("base-{t}"), ProbTable::read(&run.path(&base_test(t)), 2)?));
    }
    for &t in &cfg.targets {
        sources.push((format!("meta-{t}"), ProbTable::read(&run.path(&meta_test(t)), 2)?));
    }

    let mut files = Vec::new();
    for (n, &pos) in chosen.iter().enumerate() {
        let row = &rows[test[pos]];
        let e = &events[row.event_index];
        let record = corpus
            .record(&e.record_id)
            .ok_or_else(|| crate::error::CliError::Data(format!("unknown record {}", e.record_id)))?;
        let built = record_clips(&corpus, record, &[row.event_index], &cfg.clips)?;
        let clip = &built[0].clip;
        let sub = format!("clips/{n:02}");
        fs::create_dir_all(dir.join(&sub))?;
        write_json(
            &dir.join(&sub).join("clip.json"),
            &ClipInfo {
                event_id: row.event_id.clone(),
                patient_id: row.patient_id.clone(),
                label: e.label.to_string(),
                location: e.location.to_string(),
                sample_rate: clip.sample_rate(),
            },
        )?;
        let mut w = csv::Writer::from_path(dir.join(&sub).join("waveform.csv"))?;
        w.write_record(["time_s", "amplitude"])?;
        let rate = clip.sample_rate() as f64;
        for (k, s) in clip.samples().iter().enumerate() {
            w.write_record([(k as f64 / rate).to_string(), s.to_string()])?;
        }
        w.flush()?;
        let mel = mel_spectrogram(clip, cfg.report.n_mels, MEL_WINDOW_MS, MEL_HOP_MS)?;
        let mut w = csv::Writer::from_path(dir.join(&sub).join("mel.csv"))?;
        w.write_record(["frame_time_s", "mel_center_hz", "energy"])?;
        for (f, t) in mel.frame_times_s.iter().enumerate() {
            for (m, hz) in mel.mel_centers_hz.iter().enumerate() {
                w.write_record([t.to_string(), hz.to_string(), mel.energies[[m, f]].to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join(&sub).join("probs.csv"))?;
        w.write_record(["source", "class", "probability"])?;
        for (name, table) in &sources {
            for (c, cls) in table.class_names.iter().enumerate() {
                w.write_record([name.clone(), cls.clone(), table.probs[[pos, c]].to_string()])?;
            }
        }
        w.flush()?;
        files.extend(["clip.json", "waveform.csv", "mel.csv", "probs.csv"].map(|f| format!("{sub}/{f}")));
    }
    Ok(files)
}

pub fn report(cx: &mut Ctx) -> CliResult<Outcome> {
    let cfg = cx.cfg.clone();
    let patient_level = cfg.targets.iter().any(|t| t.is_patient_level());
    let mut rels: Vec<(String, &'static str)> = vec![
        (CORPUS.into(), "ingest"),
        (SPLIT.into(), "preprocess"),
        (ROWS.into(), "embed"),
    ];
    rels.extend(cfg.tasks.iter().map(|&t| (base_test(t), "train-base")));
    rels.extend(cfg.targets.iter().map(|&t| (meta_test(t), "stack")));
    if patient_level {
        rels.extend(cfg.targets.iter().filter(|t| t.is_patient_level()).map(|&t| (predictions(t), "aggregate")));
    }
    if cx.run.path("eval").is_dir() {
        rels.push(("eval".into(), "evaluate"));
    }
    let inputs: Vec<Input> = rels.iter().map(|(r, c)| Input::Artifact(r, c)).collect();
    let args = vec![format!("clips={}", cfg.report.clips), format!("n_mels={}", cfg.report.n_mels)];
    cx.run.stage("report", args, cfg.seed, &inputs, cx.force, |run| {
        let dir = run.path("report");
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        let mut files = write_cohort(run, &dir)?;
        let mut index = Vec::new();
        let levels: &[Level] = if patient_level { &[Level::Event, Level::Patient] } else { &[Level::Event] };
        for &level in levels {
            for item in eval_items(run, &cfg, level)? {
                let stem = format!("{}-{}", level.as_str(), item.name);
                let evaluated = run.path(&eval_file(level, &item.name));
                let (r, with_intervals): (MetricReport, bool) = if evaluated.exists() {
                    (read_json(&evaluated)?, true)
                } else {
                    (eval_report(&item, None)?, false)
                };
                let mut f = write_metric_tables(&dir, &stem, &r)?;
                f.extend(write_curves(&dir, &stem, &item)?);
                files.extend(f.iter().cloned());
                index.push(IndexEntry {
                    level: level.as_str().into(),
                    name: item.name.clone(),
                    with_intervals,
                    files: f,
                });
            }
        }
        files.extend(write_clips(run, &cfg, &dir)?);
        write_json(&dir.join("index.json"), &index)?;
        println!("report: {} files in {}", files.len() + 1, dir.display());
        Ok(vec![dir])
    })
}
