use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: BTreeMap<String, usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn fold(&self, patient_id: &str) -> Option<usize> {
        self.fold_of.get(patient_id).copied()
    }

    pub fn patients_in(&self, fold: usize) -> Vec<&str> {
        self.fold_of
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }
}

/// Patient-grouped, stratified K-fold assignment.
///
/// Patients are shuffled within each stratum and dealt round-robin; the deal
/// position carries over between strata so fold sizes differ by at most one.
/// Strata with fewer than `k` patients are still dealt, with a warning.
pub fn assign_folds(patients: &[(String, String)], k: usize, seed: u64) -> Result<(FoldAssignment, Vec<String>)> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("K = {k}; need at least 2 folds")));
    }
    if k > patients.len() {
        return Err(Error::InvalidInput(format!(
            "K = {k} exceeds the number of patients ({})",
            patients.len()
        )));
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (pid, s) in patients {
        strata.entry(s.as_str()).or_default().push(pid.as_str());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut warnings = Vec::new();
    let mut fold_of = BTreeMap::new();
    let mut offset = 0;
    for (stratum, mut ids) in strata {
        if ids.len() < k {
            warnings.push(format!(
                "stratum {stratum} has {} patients for {k} folds; some folds will lack it",
                ids.len()
            ));
        }
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids {
            if fold_of.insert(id.to_string(), offset % k).is_some() {
                return Err(Error::InvalidInput(format!("patient {id} listed twice")));
            }
            offset += 1;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok((FoldAssignment { k, fold_of, seed }, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(groups: &[(&str, usize)]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (g, n) in groups {
            for i in 0..*n {
                out.push((format!("{g}{i:03}"), g.to_string()));
            }
        }
        out
    }

    #[test]
    fn ten_patients_five_folds() {
        let (f, _) = assign_folds(&cohort(&[("a", 10)]), 5, 1).unwrap();
        for k in 0..5 {
            assert_eq!(f.patients_in(k).len(), 2);
        }
    }

    #[test]
    fn balanced_groups_spread_evenly() {
        let (f, w) = assign_folds(&cohort(&[("a", 25), ("b", 25), ("c", 25), ("d", 25)]), 5, 3).unwrap();
        assert!(w.is_empty());
        for k in 0..5 {
            for g in ["a", "b", "c", "d"] {
                let n = f.patients_in(k).iter().filter(|p| p.starts_with(g)).count();
                assert_eq!(n, 5);
            }
        }
    }

    #[test]
    fn errors_and_warnings() {
        assert!(assign_folds(&cohort(&[("a", 3)]), 5, 0).is_err());
        assert!(assign_folds(&cohort(&[("a", 3)]), 1, 0).is_err());
        let (_, w) = assign_folds(&cohort(&[("a", 8), ("b", 2)]), 5, 0).unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn deterministic_per_seed() {
        let c = cohort(&[("a", 13), ("b", 7)]);
        assert_eq!(assign_folds(&c, 5, 9).unwrap(), assign_folds(&c, 5, 9).unwrap());
    }
}
