use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Corpus, Record};
use crate::dsp::Waveform;
use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationReport {
    /// (removed record, surviving record with identical audio)
    pub duplicates: Vec<(String, String)>,
    pub poor_quality: Vec<String>,
    pub unannotated: Vec<String>,
    pub patients_without_records: Vec<String>,
    pub events_removed: usize,
}

fn content_hash(w: &Waveform) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(w.sample_rate.to_le_bytes());
    for s in &w.samples {
        h.update(s.to_bits().to_le_bytes());
    }
    h.finalize().into()
}

/// Three-stage curation: duplicate audio, poor-quality records, records
/// without events. Patients left without any record are dropped.
///
/// Only I/O on file-backed audio can fail.
pub fn curate(corpus: &Corpus) -> Result<(Corpus, CurationReport)> {
    let mut report = CurationReport::default();

    let hashes: Vec<[u8; 32]> = corpus
        .records()
        .par_iter()
        .map(|r| r.audio.load().map(|w| content_hash(&w)))
        .collect::<Result<_>>()?;

    // Records are sorted by id, so the lexicographically first copy survives.
    let mut first_seen: HashMap<[u8; 32], &str> = HashMap::new();
    let mut keep: Vec<&Record> = Vec::new();
    for (r, h) in corpus.records().iter().zip(&hashes) {
        match first_seen.get(h) {
            Some(orig) => report.duplicates.push((r.record_id.clone(), orig.to_string())),
            None => {
                first_seen.insert(*h, &r.record_id);
                keep.push(r);
            }
        }
    }

    keep.retain(|r| {
        if r.poor_quality {
            report.poor_quality.push(r.record_id.clone());
        }
        !r.poor_quality
    });

    let annotated: BTreeSet<&str> = corpus.events().iter().map(|e| e.record_id.as_str()).collect();
    keep.retain(|r| {
        let has = annotated.contains(r.record_id.as_str());
        if !has {
            report.unannotated.push(r.record_id.clone());
        }
        has
    });

    let kept_records: BTreeSet<&str> = keep.iter().map(|r| r.record_id.as_str()).collect();
    let kept_patients: BTreeSet<&str> = keep.iter().map(|r| r.patient_id.as_str()).collect();
    let events: Vec<_> = corpus
        .events()
        .iter()
        .filter(|e| kept_records.contains(e.record_id.as_str()))
        .cloned()
        .collect();
    report.events_removed = corpus.events().len() - events.len();
    let patients = corpus
        .patients()
        .iter()
        .filter(|p| {
            let has = kept_patients.contains(p.patient_id.as_str());
            if !has {
                report.patients_without_records.push(p.patient_id.clone());
            }
            has
        })
        .cloned()
        .collect();
    let records = keep.into_iter().cloned().collect();
    Ok((Corpus::new(patients, records, events)?, report))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::*;

    fn wave(seed: f32) -> Arc<Waveform> {
        Arc::new(Waveform::new((0..100).map(|i| (i as f32 * seed).sin() * 0.5).collect(), 8000).unwrap())
    }

    fn rec(id: &str, pid: &str, w: Arc<Waveform>, poor: bool) -> Record {
        Record {
            record_id: id.into(),
            patient_id: pid.into(),
            location: Location::P1,
            audio: AudioRef::Memory(w),
            poor_quality: poor,
        }
    }

    fn ev(rid: &str, start: u32) -> EventAnnotation {
        EventAnnotation {
            record_id: rid.into(),
            start_ms: start,
            end_ms: start + 2,
            label: EventLabel::Normal,
            location: Location::P1,
        }
    }

    fn pat(id: &str) -> PatientMeta {
        PatientMeta {
            patient_id: id.into(),
            age: 4.0,
            sex: Sex::Male,
            diagnosis: Diagnosis::Bronchitis,
        }
    }

    #[test]
    fn clean_corpus_is_a_fixed_point() {
        let c = Corpus::new(
            vec![pat("a"), pat("b")],
            vec![rec("r1", "a", wave(0.1), false), rec("r2", "b", wave(0.2), false)],
            vec![ev("r1", 0), ev("r2", 0), ev("r2", 5)],
        )
        .unwrap();
        let (out, report) = curate(&c).unwrap();
        assert_eq!(out.events(), c.events());
        assert_eq!(out.records().len(), 2);
        assert_eq!(report, CurationReport::default());
    }

    #[test]
    fn byte_identical_audio_keeps_one_copy() {
        let w = wave(0.3);
        let c = Corpus::new(
            vec![pat("a")],
            vec![rec("r1", "a", w.clone(), false), rec("r2", "a", Arc::new((*w).clone()), false)],
            vec![ev("r1", 0), ev("r2", 0)],
        )
        .unwrap();
        let (out, report) = curate(&c).unwrap();
        assert_eq!(out.records().len(), 1);
        assert_eq!(out.records()[0].record_id, "r1");
        assert_eq!(report.duplicates, vec![("r2".to_string(), "r1".to_string())]);
        assert_eq!(out.events().len(), 1);
    }

    #[test]
    fn poor_quality_record_and_its_events_are_removed() {
        let c = Corpus::new(
            vec![pat("a"), pat("b")],
            vec![rec("r1", "a", wave(0.1), true), rec("r2", "b", wave(0.2), false)],
            vec![ev("r1", 0), ev("r1", 5), ev("r1", 10), ev("r1", 15), ev("r2", 0)],
        )
        .unwrap();
        let (out, report) = curate(&c).unwrap();
        assert_eq!(out.events().len(), 1);
        assert_eq!(report.events_removed, 4);
        assert_eq!(report.poor_quality, vec!["r1".to_string()]);
        assert_eq!(report.patients_without_records, vec!["a".to_string()]);
    }

    #[test]
    fn unannotated_records_removed_and_curation_idempotent() {
        let c = Corpus::new(
            vec![pat("a")],
            vec![rec("r1", "a", wave(0.1), false), rec("r2", "a", wave(0.4), false)],
            vec![ev("r1", 0)],
        )
        .unwrap();
        let (once, report) = curate(&c).unwrap();
        assert_eq!(report.unannotated, vec!["r2".to_string()]);
        let (twice, _) = curate(&once).unwrap();
        assert_eq!(once.events(), twice.events());
        assert_eq!(once.patients(), twice.patients());
        let ids = |c: &Corpus| c.records().iter().map(|r| r.record_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&once), ids(&twice));
    }
}
