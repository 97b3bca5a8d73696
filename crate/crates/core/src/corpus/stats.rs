//! Train/test cohort comparison: counts, Pearson chi-square for categorical
//! variables and Mann-Whitney U for age.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::labels::{LabelTaxonomy, Target};
use super::{Corpus, CohortSplit, EventLabel, Location, Sex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square test of independence, no continuity correction.
/// All-zero rows and columns are dropped before computing degrees of freedom.
pub fn chi_square_test(table: &[Vec<f64>]) -> ChiSquare {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    let n_cols = rows.first().map_or(0, |r| r.len());
    let cols: Vec<usize> = (0..n_cols)
        .filter(|&j| rows.iter().map(|r| r[j]).sum::<f64>() > 0.0)
        .collect();
    let total: f64 = rows.iter().flat_map(|r| cols.iter().map(move |&j| r[j])).sum();
    let mut stat = 0.0;
    for r in &rows {
        let rsum: f64 = cols.iter().map(|&j| r[j]).sum();
        for &j in &cols {
            let csum: f64 = rows.iter().map(|rr| rr[j]).sum();
            let expected = rsum * csum / total;
            stat += (r[j] - expected).powi(2) / expected;
        }
    }
    let dof = rows.len().saturating_sub(1) * cols.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive dof");
        (1.0 - dist.cdf(stat)).clamp(0.0, 1.0)
    };
    ChiSquare {
        statistic: if dof == 0 { 0.0 } else { stat },
        dof,
        p_value,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub exact: bool,
}

fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Exact permutation distribution of the rank sum over all size-`n1` subsets.
fn exact_two_sided(ranks: &[f64], n1: usize, u_obs: f64) -> f64 {
    let n = ranks.len();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let mut le = 0u64;
    let mut ge = 0u64;
    let mut total = 0u64;
    let mut chosen = Vec::with_capacity(n1);
    fn rec(
        start: usize,
        ranks: &[f64],
        n1: usize,
        chosen: &mut Vec<f64>,
        visit: &mut dyn FnMut(f64),
    ) {
        if chosen.len() == n1 {
            visit(chosen.iter().sum());
            return;
        }
        let need = n1 - chosen.len();
        for i in start..=ranks.len() - need {
            chosen.push(ranks[i]);
            rec(i + 1, ranks, n1, chosen, visit);
            chosen.pop();
        }
    }
    rec(0, ranks, n1, &mut chosen, &mut |rank_sum| {
        let u = rank_sum - offset;
        total += 1;
        if u <= u_obs + 1e-9 {
            le += 1;
        }
        if u >= u_obs - 1e-9 {
            ge += 1;
        }
    });
    let _ = n;
    (2.0 * le.min(ge) as f64 / total as f64).min(1.0)
}

/// Two-sided Mann-Whitney U test. Exact enumeration when the pooled sample
/// has at most 20 observations, otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("Mann-Whitney U needs two non-empty samples".into()));
    }
    let (n1, n2) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let n = (n1 + n2) as f64;
    if n1 + n2 <= 20 {
        return Ok(MannWhitney {
            u,
            p_value: exact_two_sided(&ranks, n1, u),
            exact: true,
        });
    }
    let mu = (n1 * n2) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let sigma = ((n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term)).sqrt();
    let p_value = if sigma == 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / sigma;
        let normal = Normal::new(0.0, 1.0).unwrap();
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_value,
        exact: false,
    })
}

/// Linear-interpolated percentile, `q` in [0, 100].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRow {
    pub variable: String,
    pub category: String,
    pub all: usize,
    pub train: usize,
    pub train_pct: f64,
    pub test: usize,
    pub test_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableTest {
    pub variable: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeSummary {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortTable {
    pub patients: (usize, usize, usize),
    pub events: (usize, usize, usize),
    pub age_train: AgeSummary,
    pub age_test: AgeSummary,
    pub rows: Vec<CohortRow>,
    pub tests: Vec<VariableTest>,
}

impl CohortTable {
    pub fn p_value(&self, variable: &str) -> Option<f64> {
        self.tests.iter().find(|t| t.variable == variable).map(|t| t.p_value)
    }
}

fn age_summary(ages: &[f64]) -> AgeSummary {
    let mut s = ages.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    AgeSummary {
        median: percentile(&s, 50.0),
        q1: percentile(&s, 25.0),
        q3: percentile(&s, 75.0),
    }
}

fn categorical(
    variable: &str,
    categories: &[String],
    train: &BTreeMap<String, usize>,
    test: &BTreeMap<String, usize>,
    rows: &mut Vec<CohortRow>,
    tests: &mut Vec<VariableTest>,
) {
    let tr_total: usize = train.values().sum();
    let te_total: usize = test.values().sum();
    let mut table = vec![Vec::new(), Vec::new()];
    for c in categories {
        let a = train.get(c).copied().unwrap_or(0);
        let b = test.get(c).copied().unwrap_or(0);
        table[0].push(a as f64);
        table[1].push(b as f64);
        rows.push(CohortRow {
            variable: variable.into(),
            category: c.clone(),
            all: a + b,
            train: a,
            train_pct: 100.0 * a as f64 / tr_total.max(1) as f64,
            test: b,
            test_pct: 100.0 * b as f64 / te_total.max(1) as f64,
        });
    }
    let chi = chi_square_test(&table);
    tests.push(VariableTest {
        variable: variable.into(),
        test: "chi-square".into(),
        statistic: chi.statistic,
        p_value: chi.p_value,
    });
}

/// Builds the train/test comparison table: sex and disease group at patient
/// level; event type, sound pattern and location at event level; age via
/// Mann-Whitney U.
pub fn cohort_statistics(corpus: &Corpus, split: &CohortSplit) -> Result<CohortTable> {
    let (mut tr_p, mut te_p) = (Vec::new(), Vec::new());
    for p in corpus.patients() {
        if split.test_patient_ids.contains(&p.patient_id) {
            te_p.push(p);
        } else if split.train_patient_ids.contains(&p.patient_id) {
            tr_p.push(p);
        } else {
            return Err(Error::InvalidInput(format!(
                "patient {} not covered by the split",
                p.patient_id
            )));
        }
    }
    if tr_p.is_empty() || te_p.is_empty() {
        return Err(Error::Empty("one side of the split has no patients".into()));
    }
    let mut rows = Vec::new();
    let mut tests = Vec::new();

    let count = |it: &mut dyn Iterator<Item = String>| {
        let mut m = BTreeMap::new();
        for k in it {
            *m.entry(k).or_insert(0usize) += 1;
        }
        m
    };
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();

    let sexes: Vec<String> = Sex::ALL.iter().map(|s| s.to_string()).collect();
    categorical(
        "sex",
        &sexes,
        &count(&mut tr_p.iter().map(|p| p.sex.to_string())),
        &count(&mut te_p.iter().map(|p| p.sex.to_string())),
        &mut rows,
        &mut tests,
    );

    let dg = LabelTaxonomy::disease_group();
    let group = |d: &str| match dg.map(d) {
        Ok(Target::Class(i)) => dg.class_name(i).to_string(),
        _ => unreachable!(),
    };
    categorical(
        "disease_group",
        &dg.class_order,
        &count(&mut tr_p.iter().map(|p| group(p.diagnosis.as_str()))),
        &count(&mut te_p.iter().map(|p| group(p.diagnosis.as_str()))),
        &mut rows,
        &mut tests,
    );

    let age_tr: Vec<f64> = tr_p.iter().map(|p| p.age).collect();
    let age_te: Vec<f64> = te_p.iter().map(|p| p.age).collect();
    let mw = mann_whitney_u(&age_tr, &age_te)?;
    tests.push(VariableTest {
        variable: "age".into(),
        test: "mann-whitney-u".into(),
        statistic: mw.u,
        p_value: mw.p_value,
    });

    let (mut tr_e, mut te_e) = (Vec::new(), Vec::new());
    for e in corpus.events() {
        if split.is_test(&corpus.patient_of_event(e).patient_id) {
            te_e.push(e);
        } else {
            tr_e.push(e);
        }
    }
    let labels: Vec<String> = EventLabel::ALL.iter().map(|l| l.to_string()).collect();
    categorical(
        "event_type",
        &labels,
        &count(&mut tr_e.iter().map(|e| e.label.to_string())),
        &count(&mut te_e.iter().map(|e| e.label.to_string())),
        &mut rows,
        &mut tests,
    );
    let sp = LabelTaxonomy::sound_pattern();
    let pattern = |l: &str| match sp.map(l) {
        Ok(Target::Class(i)) => sp.class_name(i).to_string(),
        _ => unreachable!(),
    };
    categorical(
        "sound_pattern",
        &sp.class_order,
        &count(&mut tr_e.iter().map(|e| pattern(e.label.as_str()))),
        &count(&mut te_e.iter().map(|e| pattern(e.label.as_str()))),
        &mut rows,
        &mut tests,
    );
    categorical(
        "location",
        &names(&Location::ALL.iter().map(|l| l.as_str()).collect::<Vec<_>>()),
        &count(&mut tr_e.iter().map(|e| e.location.to_string())),
        &count(&mut te_e.iter().map(|e| e.location.to_string())),
        &mut rows,
        &mut tests,
    );

    Ok(CohortTable {
        patients: (tr_p.len() + te_p.len(), tr_p.len(), te_p.len()),
        events: (tr_e.len() + te_e.len(), tr_e.len(), te_e.len()),
        age_train: age_summary(&age_tr),
        age_test: age_summary(&age_te),
        rows,
        tests,
    })
}
