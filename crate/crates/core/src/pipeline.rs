//! Glue from a corpus to model inputs: event clips, embeddings and labels.

use std::collections::BTreeMap;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Location, Record};
use crate::dsp::{extract_event_clip, resample, standardize_window, Clip, ClipSource, CLIP_RATE};
use crate::encoder::{clip_key, EmbeddingCache, EncoderBackend, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::heads::TaskInputs;
use crate::tasks::TaskId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipConfig {
    /// Margin per side as a fraction of the event duration.
    pub margin: f64,
    pub window_s: f64,
}

impl Default for ClipConfig {
    fn default() -> Self {
        ClipConfig {
            margin: 0.10,
            window_s: 2.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuiltClip {
    /// Index into `corpus.events()`.
    pub event_index: usize,
    pub clip: Clip,
    /// The margin-extended span reaches into a neighbouring event.
    pub overlap: bool,
}

/// Clips for the given events of one record. The record is loaded and
/// resampled to 16 kHz once.
pub fn record_clips(corpus: &Corpus, record: &Record, event_indices: &[usize], cfg: &ClipConfig) -> Result<Vec<BuiltClip>> {
    let raw = record.audio.load()?;
    let wave = resample(&raw, CLIP_RATE)?;
    let events = corpus.events();
    event_indices
        .iter()
        .map(|&i| {
            let e = &events[i];
            let cut = extract_event_clip(&wave, e, cfg.margin)?;
            let overlap = event_indices.iter().any(|&j| {
                j != i && {
                    let o = &events[j];
                    (o.start_ms as f64) < cut.end_ms && (o.end_ms as f64) > cut.start_ms
                }
            });
            let clip = standardize_window(&cut.waveform, cfg.window_s)?
                .with_source(ClipSource::new(&e.record_id, e.start_ms, e.end_ms, cfg.margin, cfg.window_s));
            Ok(BuiltClip {
                event_index: i,
                clip,
                overlap,
            })
        })
        .collect()
}

fn by_record(corpus: &Corpus) -> Vec<(&Record, Vec<usize>)> {
    let groups = corpus.events_by_record();
    corpus
        .records()
        .iter()
        .filter_map(|r| groups.get(r.record_id.as_str()).map(|ev| (r, ev.clone())))
        .collect()
}

/// Every event's clip, in corpus event order.
pub fn build_clips(corpus: &Corpus, cfg: &ClipConfig) -> Result<Vec<BuiltClip>> {
    let mut out: Vec<BuiltClip> = by_record(corpus)
        .par_iter()
        .map(|(r, ev)| record_clips(corpus, r, ev, cfg))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    out.sort_by_key(|c| c.event_index);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub event_index: usize,
    pub event_id: String,
    pub patient_id: String,
    pub record_id: String,
    pub location: Location,
    pub clip_key: String,
    pub overlap: bool,
}

pub struct EmbeddedEvents {
    pub rows: Vec<EventRow>,
    pub inputs: TaskInputs,
    pub backend_id: String,
    pub cache_hits: usize,
    pub cache_misses: usize,
}

struct Embedded {
    row: EventRow,
    vector: Vec<f32>,
    features: Option<Vec<f64>>,
    hit: bool,
}

fn embed_one(
    corpus: &Corpus,
    built: BuiltClip,
    backend: &dyn EncoderBackend,
    cache: Option<&EmbeddingCache>,
) -> Result<Embedded> {
    let e = &corpus.events()[built.event_index];
    let key = clip_key(&built.clip);
    let cached = match cache {
        Some(c) => c.get(&key, backend.backend_id(), backend.version())?,
        None => None,
    };
    let hit = cached.is_some();
    let emb = match cached {
        Some(emb) => emb,
        None => {
            let emb = backend.embed(&built.clip)?;
            if let Some(c) = cache {
                c.put(&emb, backend.version())?;
            }
            emb
        }
    };
    let features = backend.tunable_features(&built.clip).transpose()?;
    let record = corpus.record(&e.record_id).expect("validated corpus");
    Ok(Embedded {
        row: EventRow {
            event_index: built.event_index,
            event_id: e.event_id(),
            patient_id: record.patient_id.clone(),
            record_id: e.record_id.clone(),
            location: e.location,
            clip_key: key,
            overlap: built.overlap,
        },
        vector: emb.vector,
        features,
        hit,
    })
}

/// Embeds every event of the corpus (parallel over records), consulting and
/// filling the cache when one is given.
pub fn embed_corpus(
    corpus: &Corpus,
    cfg: &ClipConfig,
    backend: &dyn EncoderBackend,
    cache: Option<&EmbeddingCache>,
) -> Result<EmbeddedEvents> {
    let mut items: Vec<Embedded> = by_record(corpus)
        .par_iter()
        .map(|(r, ev)| {
            record_clips(corpus, r, ev, cfg)?
                .into_iter()
                .map(|b| embed_one(corpus, b, backend, cache))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    items.sort_by_key(|it| it.row.event_index);

    let n = items.len();
    let mut embeddings = Array2::zeros((n, EMBEDDING_DIM));
    let feat_dim = items.first().and_then(|it| it.features.as_ref().map(Vec::len));
    let mut features = feat_dim.map(|d| Array2::zeros((n, d)));
    let mut rows = Vec::with_capacity(n);
    let mut hits = 0;
    for (i, it) in items.into_iter().enumerate() {
        for (j, v) in it.vector.iter().enumerate() {
            embeddings[[i, j]] = *v as f64;
        }
        if let (Some(f), Some(src)) = (features.as_mut(), it.features.as_ref()) {
            for (j, v) in src.iter().enumerate() {
                f[[i, j]] = *v;
            }
        }
        hits += usize::from(it.hit);
        rows.push(it.row);
    }
    Ok(EmbeddedEvents {
        rows,
        inputs: TaskInputs { embeddings, features },
        backend_id: backend.backend_id().to_string(),
        cache_hits: hits,
        cache_misses: n - hits,
    })
}

/// Class index of each event under `task` (`None` where the label is
/// excluded), aligned with `corpus.events()`.
pub fn task_labels(corpus: &Corpus, task: TaskId) -> Result<Vec<Option<usize>>> {
    let tax = task.taxonomy();
    corpus
        .events()
        .iter()
        .map(|e| task.label(&tax, e, corpus.patient_of_event(e)))
        .collect()
}

/// Rows grouped by patient id.
pub fn rows_by_patient(rows: &[EventRow]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        out.entry(r.patient_id.clone()).or_default().push(i);
    }
    out
}

/// Splits row indices into (train, test) by patient membership.
pub fn split_rows(rows: &[EventRow], is_test: impl Fn(&str) -> bool) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, r) in rows.iter().enumerate() {
        if is_test(&r.patient_id) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    (train, test)
}

/// Checks that row labels exist for every row; returns them unwrapped.
pub fn require_labels(labels: &[Option<usize>], rows: &[usize]) -> Result<Vec<usize>> {
    rows.iter()
        .map(|&i| labels[i].ok_or_else(|| Error::InvalidInput(format!("row {i} has no label for this task"))))
        .collect()
}
