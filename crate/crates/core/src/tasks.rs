//! Registry of prediction targets: the three base tasks plus the extra
//! meta-learner targets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{EventAnnotation, LabelTaxonomy, PatientMeta, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    Screening,
    SoundPattern,
    DiseaseGroup,
    EventType6,
    Disease16,
}

impl TaskId {
    /// Tasks with a base classifier, in meta-feature order (sp, scr, dg is
    /// the column order; this is the training order).
    pub const BASE: [TaskId; 3] = [TaskId::Screening, TaskId::SoundPattern, TaskId::DiseaseGroup];
    pub const ALL: [TaskId; 5] = [
        TaskId::Screening,
        TaskId::SoundPattern,
        TaskId::DiseaseGroup,
        TaskId::EventType6,
        TaskId::Disease16,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Screening => "screening",
            TaskId::SoundPattern => "sound_pattern",
            TaskId::DiseaseGroup => "disease_group",
            TaskId::EventType6 => "event_type_6",
            TaskId::Disease16 => "disease_16",
        }
    }

    pub fn taxonomy(self) -> LabelTaxonomy {
        match self {
            TaskId::Screening => LabelTaxonomy::screening(),
            TaskId::SoundPattern => LabelTaxonomy::sound_pattern(),
            TaskId::DiseaseGroup => LabelTaxonomy::disease_group(),
            TaskId::EventType6 => LabelTaxonomy::event_type_6(),
            TaskId::Disease16 => LabelTaxonomy::disease_16(),
        }
    }

    /// Whether the label is a property of the patient rather than the event.
    pub fn is_patient_level(self) -> bool {
        matches!(self, TaskId::DiseaseGroup | TaskId::Disease16)
    }

    /// Class index of an event under this task; `None` when the event's
    /// label is excluded from the target.
    pub fn label(self, tax: &LabelTaxonomy, event: &EventAnnotation, patient: &PatientMeta) -> Result<Option<usize>> {
        let source = if self.is_patient_level() {
            patient.diagnosis.as_str()
        } else {
            event.label.as_str()
        };
        Ok(match tax.map(source)? {
            Target::Class(c) => Some(c),
            Target::Excluded => None,
        })
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown task `{s}`")))
    }
}
