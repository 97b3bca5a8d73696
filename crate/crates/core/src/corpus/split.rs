use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{LabelTaxonomy, Target};
use super::{Corpus, PatientMeta};
use crate::error::{Error, Result};

/// Patient attribute used to form stratification cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    DiseaseGroup,
    Diagnosis,
    Sex,
}

impl Stratum {
    pub fn key(self, p: &PatientMeta) -> String {
        match self {
            Stratum::DiseaseGroup => {
                let tax = LabelTaxonomy::disease_group();
                match tax.map(p.diagnosis.as_str()) {
                    Ok(Target::Class(i)) => tax.class_name(i).to_string(),
                    _ => unreachable!("disease-group taxonomy is total"),
                }
            }
            Stratum::Diagnosis => p.diagnosis.to_string(),
            Stratum::Sex => p.sex.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CohortSplit {
    pub train_patient_ids: BTreeSet<String>,
    pub test_patient_ids: BTreeSet<String>,
    pub seed: u64,
}

impl CohortSplit {
    pub fn is_test(&self, patient_id: &str) -> bool {
        self.test_patient_ids.contains(patient_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitWarning {
    pub stratum: String,
    pub patient_id: String,
    pub message: String,
}

fn joint_key(p: &PatientMeta, strata: &[Stratum]) -> String {
    strata.iter().map(|s| s.key(p)).collect::<Vec<_>>().join("|")
}

/// Stratified patient-level split. Per-cell test counts are the floor or
/// ceiling of the cell's expected count (largest-remainder allocation), so
/// each cell is within one patient of its target. Single-patient cells go to
/// train with a warning.
pub fn split_cohort(
    corpus: &Corpus,
    test_fraction: f64,
    strata: &[Stratum],
    seed: u64,
) -> Result<(CohortSplit, Vec<SplitWarning>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    if strata.is_empty() {
        return Err(Error::InvalidInput("at least one stratum attribute required".into()));
    }
    let mut cells: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for p in corpus.patients() {
        cells
            .entry(joint_key(p, strata))
            .or_default()
            .push(p.patient_id.as_str());
    }

    let mut warnings = Vec::new();
    let mut train = BTreeSet::new();
    let mut test = BTreeSet::new();

    let eligible: Vec<(&String, usize)> = cells
        .iter()
        .filter(|(_, ids)| ids.len() >= 2)
        .map(|(k, ids)| (k, ids.len()))
        .collect();
    let expected: Vec<f64> = eligible.iter().map(|(_, n)| *n as f64 * test_fraction).collect();
    let mut alloc: Vec<usize> = eligible
        .iter()
        .zip(&expected)
        .map(|((_, n), e)| (e.floor() as usize).min(n - 1))
        .collect();
    let target_total = expected.iter().sum::<f64>().round() as usize;
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = expected[a] - expected[a].floor();
        let fb = expected[b] - expected[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut remaining = target_total.saturating_sub(alloc.iter().sum());
    for &i in &order {
        if remaining == 0 {
            break;
        }
        if alloc[i] < eligible[i].1 - 1 && (alloc[i] as f64) < expected[i].ceil() {
            alloc[i] += 1;
            remaining -= 1;
        }
    }
    let alloc: BTreeMap<&String, usize> =
        eligible.iter().zip(alloc).map(|((k, _), a)| (*k, a)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (key, ids) in &cells {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        match alloc.get(key) {
            None => {
                log::warn!("stratum {key} has a single patient; assigned to train");
                warnings.push(SplitWarning {
                    stratum: key.clone(),
                    patient_id: ids[0].to_string(),
                    message: "single-patient stratum assigned to train".into(),
                });
                train.insert(ids[0].to_string());
            }
            Some(&n_test) => {
                for (i, id) in ids.iter().enumerate() {
                    if i < n_test {
                        test.insert(id.to_string());
                    } else {
                        train.insert(id.to_string());
                    }
                }
            }
        }
    }
    Ok((
        CohortSplit {
            train_patient_ids: train,
            test_patient_ids: test,
            seed,
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::*;

    fn corpus_with(diags: &[Diagnosis]) -> Corpus {
        let patients = diags
            .iter()
            .enumerate()
            .map(|(i, d)| PatientMeta {
                patient_id: format!("p{i:03}"),
                age: 1.0 + i as f64,
                sex: if i % 2 == 0 { Sex::Male } else { Sex::Female },
                diagnosis: *d,
            })
            .collect();
        Corpus::new(patients, vec![], vec![]).unwrap()
    }

    #[test]
    fn ten_patients_split_eight_two() {
        use Diagnosis::*;
        let c = corpus_with(&[
            Asthma, Asthma, Asthma, PneumoniaSevere, PneumoniaSevere, PneumoniaSevere,
            ControlGroup, ControlGroup, Unknown, Unknown,
        ]);
        let (s, w) = split_cohort(&c, 0.2, &[Stratum::DiseaseGroup], 3).unwrap();
        assert!(w.is_empty());
        assert_eq!(s.train_patient_ids.len(), 8);
        assert_eq!(s.test_patient_ids.len(), 2);
        assert!(s.train_patient_ids.is_disjoint(&s.test_patient_ids));
    }

    #[test]
    fn split_is_seed_deterministic() {
        let c = corpus_with(&[Diagnosis::Asthma; 30]);
        let a = split_cohort(&c, 0.3, &[Stratum::DiseaseGroup], 9).unwrap();
        let b = split_cohort(&c, 0.3, &[Stratum::DiseaseGroup], 9).unwrap();
        assert_eq!(a, b);
        let other = split_cohort(&c, 0.3, &[Stratum::DiseaseGroup], 10).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn single_patient_stratum_goes_to_train_with_warning() {
        use Diagnosis::*;
        let c = corpus_with(&[Asthma, Asthma, Asthma, Asthma, KawasakiDisease]);
        let (s, w) = split_cohort(&c, 0.25, &[Stratum::DiseaseGroup], 1).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].stratum, "Others");
        assert!(s.train_patient_ids.contains("p004"));
    }

    #[test]
    fn fraction_bounds_checked() {
        let c = corpus_with(&[Diagnosis::Asthma; 4]);
        assert!(split_cohort(&c, 0.0, &[Stratum::DiseaseGroup], 1).is_err());
        assert!(split_cohort(&c, 1.0, &[Stratum::DiseaseGroup], 1).is_err());
    }

    #[test]
    fn full_scale_group_counts_land_on_target() {
        // 904 / 359 / 159 / 230 patients across the four groups.
        let mut diags = vec![Diagnosis::PneumoniaNonSevere; 904];
        diags.extend(vec![Diagnosis::Asthma; 359]);
        diags.extend(vec![Diagnosis::ControlGroup; 159]);
        diags.extend(vec![Diagnosis::Hemoptysis; 230]);
        let c = corpus_with(&diags);
        let (s, _) = split_cohort(&c, 331.0 / 1652.0, &[Stratum::DiseaseGroup], 42).unwrap();
        assert_eq!(s.test_patient_ids.len(), 331);
        assert_eq!(s.train_patient_ids.len(), 1321);
        let tax = LabelTaxonomy::disease_group();
        let mut per_group = [0usize; 4];
        for p in c.patients() {
            if s.is_test(&p.patient_id) {
                if let Target::Class(g) = tax.map(p.diagnosis.as_str()).unwrap() {
                    per_group[g] += 1;
                }
            }
        }
        for (got, n) in per_group.iter().zip([904.0, 359.0, 159.0, 230.0]) {
            let expected: f64 = n * 331.0 / 1652.0;
            assert!((*got as f64 - expected).abs() <= 1.0, "{got} vs {expected}");
        }
    }
}
