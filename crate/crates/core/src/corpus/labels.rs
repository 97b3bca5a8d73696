//! Label taxonomies mapping source annotations onto study targets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Diagnosis, EventLabel};
use crate::error::{Error, Result};

/// Result of mapping one source label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Class(usize),
    /// The source label is deliberately left out of this target.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    pub name: String,
    /// Source label to target class name; `None` marks an excluded label.
    pub mapping: BTreeMap<String, Option<String>>,
    pub class_order: Vec<String>,
}

impl LabelTaxonomy {
    pub fn new(
        name: impl Into<String>,
        pairs: &[(&str, Option<&str>)],
        class_order: &[&str],
    ) -> Result<Self> {
        let name = name.into();
        let mut mapping = BTreeMap::new();
        for (src, dst) in pairs {
            if mapping.insert(src.to_string(), dst.map(str::to_string)).is_some() {
                return Err(Error::InvalidInput(format!(
                    "taxonomy {name}: source label {src} mapped twice"
                )));
            }
        }
        let order: Vec<String> = class_order.iter().map(|s| s.to_string()).collect();
        let unique: BTreeSet<&String> = order.iter().collect();
        if unique.len() != order.len() {
            return Err(Error::InvalidInput(format!("taxonomy {name}: duplicate classes")));
        }
        for dst in mapping.values().flatten() {
            if !unique.contains(dst) {
                return Err(Error::InvalidInput(format!(
                    "taxonomy {name}: target {dst} missing from class order"
                )));
            }
        }
        Ok(LabelTaxonomy {
            name,
            mapping,
            class_order: order,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn class_name(&self, idx: usize) -> &str {
        &self.class_order[idx]
    }

    pub fn map(&self, source: &str) -> Result<Target> {
        match self.mapping.get(source) {
            None => Err(Error::UnknownLabel {
                taxonomy: self.name.clone(),
                label: source.to_string(),
            }),
            Some(None) => Ok(Target::Excluded),
            Some(Some(dst)) => Ok(Target::Class(
                self.class_order.iter().position(|c| c == dst).expect("validated"),
            )),
        }
    }

    /// Event labels to Normal / Abnormal.
    pub fn screening() -> Self {
        use EventLabel::*;
        let pairs: Vec<(&str, Option<&str>)> = EventLabel::ALL
            .iter()
            .map(|l| {
                let dst = match l {
                    Normal | NoEvent => "Normal",
                    _ => "Abnormal",
                };
                (l.as_str(), Some(dst))
            })
            .collect();
        Self::new("screening", &pairs, &["Normal", "Abnormal"]).expect("static taxonomy")
    }

    /// Event labels to Normal / Crackles / Rhonchi.
    pub fn sound_pattern() -> Self {
        use EventLabel::*;
        let pairs: Vec<(&str, Option<&str>)> = EventLabel::ALL
            .iter()
            .map(|l| {
                let dst = match l {
                    Normal | NoEvent => "Normal",
                    FineCrackle | CoarseCrackle | WheezeCrackle => "Crackles",
                    Wheeze | Stridor | Rhonchi => "Rhonchi",
                };
                (l.as_str(), Some(dst))
            })
            .collect();
        Self::new("sound_pattern", &pairs, &["Normal", "Crackles", "Rhonchi"])
            .expect("static taxonomy")
    }

    /// Diagnoses to the four disease groups.
    pub fn disease_group() -> Self {
        use Diagnosis::*;
        let pairs: Vec<(&str, Option<&str>)> = Diagnosis::ALL
            .iter()
            .map(|d| {
                let dst = match d {
                    PneumoniaSevere | PneumoniaNonSevere => "Pneumonia",
                    Asthma | Bronchitis | Bronchiolitis | Bronchiectasis
                    | ProtractedBacterialBronchitis => "Bronchial diseases",
                    ControlGroup => "Normal",
                    AcuteUpperRespiratoryInfection | AirwayForeignBody | ChronicCough
                    | Hemoptysis | KawasakiDisease | OtherRespiratoryDiseases
                    | PulmonaryHemosiderosis | Unknown => "Others",
                };
                (d.as_str(), Some(dst))
            })
            .collect();
        Self::new(
            "disease_group",
            &pairs,
            &["Pneumonia", "Bronchial diseases", "Normal", "Others"],
        )
        .expect("static taxonomy")
    }

    /// The six-class event taxonomy; No Event and Stridor are excluded.
    pub fn event_type_6() -> Self {
        use EventLabel::*;
        let pairs: Vec<(&str, Option<&str>)> = EventLabel::ALL
            .iter()
            .map(|l| {
                let dst = match l {
                    NoEvent | Stridor => None,
                    other => Some(other.as_str()),
                };
                (l.as_str(), dst)
            })
            .collect();
        Self::new(
            "event_type_6",
            &pairs,
            &[
                "Coarse Crackle",
                "Fine Crackle",
                "Normal",
                "Rhonchi",
                "Wheeze",
                "Wheeze+Crackle",
            ],
        )
        .expect("static taxonomy")
    }

    /// Identity over the sixteen diagnoses.
    pub fn disease_16() -> Self {
        let names: Vec<&str> = Diagnosis::ALL.iter().map(|d| d.as_str()).collect();
        let pairs: Vec<(&str, Option<&str>)> = names.iter().map(|n| (*n, Some(*n))).collect();
        Self::new("disease_16", &pairs, &names).expect("static taxonomy")
    }
}

/// Looks up the target class name for a source label. `Ok(None)` means the
/// label is excluded from this taxonomy.
pub fn map_label<'t>(source: &str, taxonomy: &'t LabelTaxonomy) -> Result<Option<&'t str>> {
    Ok(match taxonomy.map(source)? {
        Target::Class(i) => Some(taxonomy.class_name(i)),
        Target::Excluded => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        let sp = LabelTaxonomy::sound_pattern();
        assert_eq!(map_label("Wheeze", &sp).unwrap(), Some("Rhonchi"));
        assert_eq!(map_label("No Event", &sp).unwrap(), Some("Normal"));
        let dg = LabelTaxonomy::disease_group();
        assert_eq!(map_label("Asthma", &dg).unwrap(), Some("Bronchial diseases"));
        assert_eq!(map_label("Kawasaki disease", &dg).unwrap(), Some("Others"));
    }

    #[test]
    fn unknown_source_label_errors() {
        let err = map_label("Squawk", &LabelTaxonomy::screening()).unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
    }

    #[test]
    fn taxonomies_are_total_over_their_domain() {
        for tax in [
            LabelTaxonomy::screening(),
            LabelTaxonomy::sound_pattern(),
            LabelTaxonomy::event_type_6(),
        ] {
            for l in EventLabel::ALL {
                tax.map(l.as_str()).unwrap();
            }
            assert_eq!(tax.mapping.len(), 8);
        }
        for tax in [LabelTaxonomy::disease_group(), LabelTaxonomy::disease_16()] {
            for d in Diagnosis::ALL {
                tax.map(d.as_str()).unwrap();
            }
            assert_eq!(tax.mapping.len(), 16);
        }
    }

    #[test]
    fn event_type_6_excludes_no_event_and_stridor() {
        let t = LabelTaxonomy::event_type_6();
        assert_eq!(t.map("Stridor").unwrap(), Target::Excluded);
        assert_eq!(t.map("No Event").unwrap(), Target::Excluded);
        assert_eq!(t.n_classes(), 6);
    }

    #[test]
    fn duplicate_class_order_rejected() {
        assert!(LabelTaxonomy::new("x", &[("a", Some("A"))], &["A", "A"]).is_err());
    }
}
