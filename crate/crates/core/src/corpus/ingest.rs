//! On-disk corpus adapters.
//!
//! The native layout under a data root is:
//!
//! ```text
//! metadata.csv              patient_id,age,sex,diagnosis
//! annotations/<record>.json {record_id, patient_id, location, quality, events: [{start_ms, end_ms, label}]}
//! audio/<record>.wav        PCM WAV, any rate, mono or stereo
//! ```
//!
//! The `sprsound` adapter reads the upstream release naming convention
//! (`wav/<pid>_<age>_<sex>_<loc>_<rec>.wav`, `json/<same>.json` with
//! `record_annotation` / `event_annotation`) plus a `diagnosis.csv` table.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AudioRef, Corpus, Diagnosis, EventAnnotation, EventLabel, Location, PatientMeta, Record, Sex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Adapter {
    Layout,
    Sprsound,
}

impl FromStr for Adapter {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layout" => Ok(Adapter::Layout),
            "sprsound" => Ok(Adapter::Sprsound),
            other => Err(Error::InvalidInput(format!("unknown adapter `{other}`"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AnnotationDoc {
    record_id: String,
    patient_id: String,
    location: Location,
    quality: Quality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    audio: Option<String>,
    events: Vec<EventDoc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Quality {
    Good,
    Poor,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventDoc {
    start_ms: u32,
    end_ms: u32,
    label: EventLabel,
}

#[derive(Debug, Deserialize)]
struct MetadataRow {
    patient_id: String,
    age: f64,
    sex: Sex,
    diagnosis: Diagnosis,
}

pub fn ingest_corpus(root: &Path, adapter: Adapter) -> Result<Corpus> {
    match adapter {
        Adapter::Layout => ingest_layout(root),
        Adapter::Sprsound => ingest_sprsound(root),
    }
}

fn json_offset(text: &str, err: &serde_json::Error) -> u64 {
    if err.line() == 0 {
        return 0;
    }
    let line_start: usize = text
        .split_inclusive('\n')
        .take(err.line() - 1)
        .map(str::len)
        .sum();
    (line_start + err.column().saturating_sub(1)) as u64
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        file: path.to_path_buf(),
        offset: json_offset(&text, &e),
        message: e.to_string(),
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map(|p| p.byte()).unwrap_or(0);
    Error::Parse {
        file: path.to_path_buf(),
        offset,
        message: e.to_string(),
    }
}

fn read_metadata(path: &Path) -> Result<Vec<PatientMeta>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for row in reader.deserialize::<MetadataRow>() {
        let row = row.map_err(|e| csv_error(path, e))?;
        out.push(PatientMeta {
            patient_id: row.patient_id,
            age: row.age,
            sex: row.sex,
            diagnosis: row.diagnosis,
        });
    }
    Ok(out)
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    files.sort();
    Ok(files)
}

fn ingest_layout(root: &Path) -> Result<Corpus> {
    let meta_path = root.join("metadata.csv");
    let ann_files = sorted_files(&root.join("annotations"), "json")?;
    if !meta_path.exists() {
        if ann_files.is_empty() {
            return Ok(Corpus::default());
        }
        return Err(Error::Integrity(format!(
            "{} missing but annotations are present",
            meta_path.display()
        )));
    }
    let patients = read_metadata(&meta_path)?;

    let docs: Vec<AnnotationDoc> = ann_files
        .par_iter()
        .map(|p| parse_json::<AnnotationDoc>(p))
        .collect::<Result<_>>()?;

    let mut records = Vec::with_capacity(docs.len());
    let mut events = Vec::new();
    for doc in docs {
        let audio = match &doc.audio {
            Some(rel) => root.join(rel),
            None => root.join("audio").join(format!("{}.wav", doc.record_id)),
        };
        for ev in &doc.events {
            events.push(EventAnnotation {
                record_id: doc.record_id.clone(),
                start_ms: ev.start_ms,
                end_ms: ev.end_ms,
                label: ev.label,
                location: doc.location,
            });
        }
        records.push(Record {
            record_id: doc.record_id,
            patient_id: doc.patient_id,
            location: doc.location,
            audio: AudioRef::File(audio),
            poor_quality: doc.quality == Quality::Poor,
        });
    }
    Corpus::new(patients, records, events)
}

/// Writes a corpus in the native layout. In-memory audio is encoded to
/// 16-bit PCM WAV under `audio/`.
pub fn write_layout(corpus: &Corpus, root: &Path) -> Result<Corpus> {
    fs::create_dir_all(root.join("annotations"))?;
    fs::create_dir_all(root.join("audio"))?;
    let meta_path = root.join("metadata.csv");
    let mut w = csv::Writer::from_path(&meta_path)?;
    w.write_record(["patient_id", "age", "sex", "diagnosis"])?;
    for p in corpus.patients() {
        w.write_record([
            p.patient_id.clone(),
            format!("{}", p.age),
            p.sex.to_string(),
            p.diagnosis.to_string(),
        ])?;
    }
    w.flush()?;

    let by_record = corpus.events_by_record();
    let records: Vec<Record> = corpus
        .records()
        .par_iter()
        .map(|r| -> Result<Record> {
            let rel = format!("audio/{}.wav", r.record_id);
            let wav_path = root.join(&rel);
            let audio = r.audio.load()?;
            crate::dsp::write_wav(&wav_path, &audio)?;
            let events = by_record
                .get(r.record_id.as_str())
                .map(|ix| {
                    ix.iter()
                        .map(|&i| {
                            let e = &corpus.events()[i];
                            EventDoc {
                                start_ms: e.start_ms,
                                end_ms: e.end_ms,
                                label: e.label,
                            }
                        })
                        .collect()
                })
                .unwrap_or_default();
            let doc = AnnotationDoc {
                record_id: r.record_id.clone(),
                patient_id: r.patient_id.clone(),
                location: r.location,
                quality: if r.poor_quality { Quality::Poor } else { Quality::Good },
                audio: None,
                events,
            };
            let path = root.join("annotations").join(format!("{}.json", r.record_id));
            fs::write(path, serde_json::to_vec_pretty(&doc)?)?;
            Ok(Record {
                audio: AudioRef::File(wav_path),
                ..r.clone()
            })
        })
        .collect::<Result<_>>()?;
    Corpus::new(corpus.patients().to_vec(), records, corpus.events().to_vec())
}

#[derive(Debug, Deserialize)]
struct SprAnnotation {
    record_annotation: String,
    #[serde(default)]
    event_annotation: Vec<SprEvent>,
}

#[derive(Debug, Deserialize)]
struct SprEvent {
    start: serde_json::Value,
    end: serde_json::Value,
    #[serde(rename = "type")]
    kind: String,
}

fn value_ms(v: &serde_json::Value) -> Option<u32> {
    match v {
        serde_json::Value::Number(n) => n.as_f64().map(|x| x.round() as u32),
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok().map(|x| x.round() as u32),
        _ => None,
    }
}

struct SprName {
    patient_id: String,
    age: f64,
    sex: Sex,
    location: Location,
}

// `<pid>_<age>_<sex>_<loc>_<rec>`; sex code 0 = male, 1 = female.
fn parse_spr_name(stem: &str, path: &Path) -> Result<SprName> {
    let bad = |what: &str| Error::Parse {
        file: path.to_path_buf(),
        offset: 0,
        message: format!("file name `{stem}`: {what}"),
    };
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() != 5 {
        return Err(bad("expected <pid>_<age>_<sex>_<loc>_<rec>"));
    }
    let age = parts[1].parse::<f64>().map_err(|_| bad("age"))?;
    let sex = match parts[2] {
        "0" => Sex::Male,
        "1" => Sex::Female,
        other => other.parse().map_err(|_| bad("sex"))?,
    };
    let location = parts[3].to_ascii_lowercase().parse().map_err(|_| bad("location"))?;
    Ok(SprName {
        patient_id: parts[0].to_string(),
        age,
        sex,
        location,
    })
}

fn ingest_sprsound(root: &Path) -> Result<Corpus> {
    let json_files = sorted_files(&root.join("json"), "json")?;
    if json_files.is_empty() {
        return Ok(Corpus::default());
    }
    let diag_path = root.join("diagnosis.csv");
    let mut diagnoses = std::collections::BTreeMap::new();
    let mut reader = csv::Reader::from_path(&diag_path).map_err(|e| csv_error(&diag_path, e))?;
    for row in reader.deserialize::<(String, Diagnosis)>() {
        let (pid, d) = row.map_err(|e| csv_error(&diag_path, e))?;
        diagnoses.insert(pid, d);
    }

    let parsed: Vec<(String, SprName, SprAnnotation, PathBuf)> = json_files
        .par_iter()
        .map(|p| {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let name = parse_spr_name(&stem, p)?;
            let doc: SprAnnotation = parse_json(p)?;
            Ok((stem, name, doc, p.clone()))
        })
        .collect::<Result<_>>()?;

    let mut patients = std::collections::BTreeMap::new();
    let mut records = Vec::new();
    let mut events = Vec::new();
    for (stem, name, doc, path) in parsed {
        let diagnosis = *diagnoses.get(&name.patient_id).ok_or_else(|| {
            Error::Integrity(format!("no diagnosis for patient {}", name.patient_id))
        })?;
        patients.entry(name.patient_id.clone()).or_insert(PatientMeta {
            patient_id: name.patient_id.clone(),
            age: name.age,
            sex: name.sex,
            diagnosis,
        });
        for ev in &doc.event_annotation {
            let (Some(start_ms), Some(end_ms)) = (value_ms(&ev.start), value_ms(&ev.end)) else {
                return Err(Error::Parse {
                    file: path.clone(),
                    offset: 0,
                    message: "event start/end not numeric".into(),
                });
            };
            events.push(EventAnnotation {
                record_id: stem.clone(),
                start_ms,
                end_ms,
                label: ev.kind.parse()?,
                location: name.location,
            });
        }
        records.push(Record {
            record_id: stem.clone(),
            patient_id: name.patient_id,
            location: name.location,
            audio: AudioRef::File(root.join("wav").join(format!("{stem}.wav"))),
            poor_quality: doc.record_annotation.eq_ignore_ascii_case("poor quality"),
        });
    }
    Corpus::new(patients.into_values().collect(), records, events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_offset_points_into_the_file() {
        let text = "{\n  \"a\": 1,\n  \"b\": x\n}";
        let err = serde_json::from_str::<serde_json::Value>(text).unwrap_err();
        let off = json_offset(text, &err) as usize;
        assert_eq!(&text[off..off + 1], "x");
    }

    #[test]
    fn sprsound_names_parse() {
        let n = parse_spr_name("65087374_7.1_1_p2_3127", Path::new("x")).unwrap();
        assert_eq!(n.patient_id, "65087374");
        assert_eq!(n.sex, Sex::Female);
        assert_eq!(n.location, Location::P2);
        assert!(parse_spr_name("bad_name", Path::new("x")).is_err());
    }
}
