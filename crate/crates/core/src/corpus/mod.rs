//! Patients, recordings and event annotations, plus the curation, label
//! mapping, splitting and cohort-statistics operations over them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

mod curate;
mod ingest;
pub mod labels;
mod split;
pub mod stats;

pub use curate::{curate, CurationReport};
pub use ingest::{ingest_corpus, write_layout, Adapter};
pub use labels::{map_label, LabelTaxonomy, Target};
pub use split::{split_cohort, CohortSplit, SplitWarning, Stratum};
pub use stats::{chi_square_test, cohort_statistics, mann_whitney_u, CohortTable};

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                let t = s.trim();
                $(
                    if t.eq_ignore_ascii_case($text) $(|| t.eq_ignore_ascii_case($alias))* {
                        return Ok($name::$variant);
                    }
                )+
                Err(Error::UnknownLabel { taxonomy: stringify!($name).into(), label: s.into() })
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> { s.parse() }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String { v.as_str().to_string() }
        }
    };
}

string_enum!(
    Sex {
        Male => "male" | "m",
        Female => "female" | "f",
    }
);

string_enum!(
    /// The sixteen source diagnoses.
    Diagnosis {
        PneumoniaSevere => "Pneumonia (severe)",
        PneumoniaNonSevere => "Pneumonia (non-severe)",
        Asthma => "Asthma",
        Bronchitis => "Bronchitis",
        Bronchiolitis => "Bronchiolitis",
        Bronchiectasis => "Bronchiectasis",
        ProtractedBacterialBronchitis => "Protracted bacterial bronchitis",
        ControlGroup => "Control Group",
        AcuteUpperRespiratoryInfection => "Acute upper respiratory infection" | "Acute upper resp. infection",
        AirwayForeignBody => "Airway foreign body",
        ChronicCough => "Chronic cough",
        Hemoptysis => "Hemoptysis",
        KawasakiDisease => "Kawasaki disease",
        OtherRespiratoryDiseases => "Other respiratory diseases",
        PulmonaryHemosiderosis => "Pulmonary hemosiderosis",
        Unknown => "Unknown",
    }
);

string_enum!(
    /// Event-level annotation labels.
    EventLabel {
        Normal => "Normal",
        FineCrackle => "Fine Crackle",
        CoarseCrackle => "Coarse Crackle",
        Wheeze => "Wheeze",
        WheezeCrackle => "Wheeze+Crackle" | "Wheeze&Crackle",
        Rhonchi => "Rhonchi",
        Stridor => "Stridor",
        NoEvent => "No Event",
    }
);

string_enum!(
    /// Chest auscultation position.
    Location {
        P1 => "p1",
        P2 => "p2",
        P3 => "p3",
        P4 => "p4",
    }
);

impl Location {
    /// Ordinal code 1..=4.
    pub fn ordinal(self) -> u8 {
        match self {
            Location::P1 => 1,
            Location::P2 => 2,
            Location::P3 => 3,
            Location::P4 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientMeta {
    pub patient_id: String,
    pub age: f64,
    pub sex: Sex,
    pub diagnosis: Diagnosis,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventAnnotation {
    pub record_id: String,
    pub start_ms: u32,
    pub end_ms: u32,
    pub label: EventLabel,
    pub location: Location,
}

impl EventAnnotation {
    /// Stable identifier, unique within a corpus.
    pub fn event_id(&self) -> String {
        format!("{}@{}-{}", self.record_id, self.start_ms, self.end_ms)
    }

    pub fn duration_ms(&self) -> u32 {
        self.end_ms - self.start_ms
    }
}

/// Where a record's audio lives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum AudioRef {
    File(PathBuf),
    #[serde(skip)]
    Memory(Arc<Waveform>),
}

impl AudioRef {
    pub fn load(&self) -> Result<Arc<Waveform>> {
        match self {
            AudioRef::File(path) => Ok(Arc::new(crate::dsp::read_wav(path)?)),
            AudioRef::Memory(w) => Ok(Arc::clone(w)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub record_id: String,
    pub patient_id: String,
    pub location: Location,
    pub audio: AudioRef,
    pub poor_quality: bool,
}

/// A validated collection of patients, records and events.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Corpus {
    patients: Vec<PatientMeta>,
    records: Vec<Record>,
    events: Vec<EventAnnotation>,
}

impl Corpus {
    /// Builds a corpus, checking referential integrity. Patients, records and
    /// events are kept sorted by id so iteration order is canonical.
    pub fn new(
        mut patients: Vec<PatientMeta>,
        mut records: Vec<Record>,
        mut events: Vec<EventAnnotation>,
    ) -> Result<Self> {
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        events.sort_by(|a, b| {
            (&a.record_id, a.start_ms, a.end_ms).cmp(&(&b.record_id, b.start_ms, b.end_ms))
        });

        let mut ids = BTreeSet::new();
        for p in &patients {
            if !(p.age.is_finite() && p.age >= 0.0) {
                return Err(Error::Integrity(format!(
                    "patient {} has invalid age {}",
                    p.patient_id, p.age
                )));
            }
            if !ids.insert(p.patient_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate patient id {}", p.patient_id)));
            }
        }
        let mut record_ids = BTreeSet::new();
        for r in &records {
            if !ids.contains(r.patient_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "record {} references unknown patient {}",
                    r.record_id, r.patient_id
                )));
            }
            if !record_ids.insert(r.record_id.as_str()) {
                return Err(Error::Integrity(format!("duplicate record id {}", r.record_id)));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &events {
            if !record_ids.contains(e.record_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "event {} references unknown record {}",
                    e.event_id(),
                    e.record_id
                )));
            }
            if e.start_ms >= e.end_ms {
                return Err(Error::Integrity(format!(
                    "event {} has start_ms >= end_ms",
                    e.event_id()
                )));
            }
            if !seen.insert((e.record_id.as_str(), e.start_ms, e.end_ms)) {
                return Err(Error::Integrity(format!("duplicate event {}", e.event_id())));
            }
        }
        Ok(Corpus {
            patients,
            records,
            events,
        })
    }

    pub fn patients(&self) -> &[PatientMeta] {
        &self.patients
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn events(&self) -> &[EventAnnotation] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientMeta> {
        self.patients
            .binary_search_by(|p| p.patient_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.patients[i])
    }

    pub fn record(&self, id: &str) -> Option<&Record> {
        self.records
            .binary_search_by(|r| r.record_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// Patient owning an event.
    pub fn patient_of_event(&self, event: &EventAnnotation) -> &PatientMeta {
        let record = self.record(&event.record_id).expect("validated reference");
        self.patient(&record.patient_id).expect("validated reference")
    }

    /// Event indices grouped by patient id.
    pub fn events_by_patient(&self) -> BTreeMap<&str, Vec<usize>> {
        let owner: HashMap<&str, &str> = self
            .records
            .iter()
            .map(|r| (r.record_id.as_str(), r.patient_id.as_str()))
            .collect();
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.events.iter().enumerate() {
            out.entry(owner[e.record_id.as_str()]).or_default().push(i);
        }
        out
    }

    /// Event indices grouped by record id.
    pub fn events_by_record(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.events.iter().enumerate() {
            out.entry(e.record_id.as_str()).or_default().push(i);
        }
        out
    }

    /// Sub-corpus keeping only the listed patients (and their records/events).
    pub fn restrict_to(&self, patient_ids: &BTreeSet<String>) -> Corpus {
        let patients = self
            .patients
            .iter()
            .filter(|p| patient_ids.contains(&p.patient_id))
            .cloned()
            .collect();
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| patient_ids.contains(&r.patient_id))
            .cloned()
            .collect();
        let kept: BTreeSet<&str> = records.iter().map(|r| r.record_id.as_str()).collect();
        let events = self
            .events
            .iter()
            .filter(|e| kept.contains(e.record_id.as_str()))
            .cloned()
            .collect();
        Corpus::new(patients, records, events).expect("subset of a valid corpus is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient(id: &str) -> PatientMeta {
        PatientMeta {
            patient_id: id.into(),
            age: 3.0,
            sex: Sex::Female,
            diagnosis: Diagnosis::Asthma,
        }
    }

    fn record(id: &str, patient: &str) -> Record {
        Record {
            record_id: id.into(),
            patient_id: patient.into(),
            location: Location::P1,
            audio: AudioRef::File(PathBuf::from(format!("{id}.wav"))),
            poor_quality: false,
        }
    }

    #[test]
    fn labels_parse_with_aliases() {
        assert_eq!("Wheeze&Crackle".parse::<EventLabel>().unwrap(), EventLabel::WheezeCrackle);
        assert_eq!(
            "Acute upper resp. infection".parse::<Diagnosis>().unwrap(),
            Diagnosis::AcuteUpperRespiratoryInfection
        );
        assert_eq!("M".parse::<Sex>().unwrap(), Sex::Male);
        assert!("p5".parse::<Location>().is_err());
        assert_eq!(Diagnosis::ALL.len(), 16);
        assert_eq!(EventLabel::ALL.len(), 8);
    }

    #[test]
    fn dangling_record_reference_is_rejected() {
        let err = Corpus::new(vec![patient("a")], vec![record("r1", "zz")], vec![]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn dangling_event_reference_is_rejected() {
        let ev = EventAnnotation {
            record_id: "nope".into(),
            start_ms: 0,
            end_ms: 10,
            label: EventLabel::Normal,
            location: Location::P1,
        };
        let err = Corpus::new(vec![patient("a")], vec![record("r1", "a")], vec![ev]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn negative_age_is_rejected() {
        let mut p = patient("a");
        p.age = -1.0;
        assert!(Corpus::new(vec![p], vec![], vec![]).is_err());
    }
}
