//! Patient-level percentile bootstrap.
//!
//! Each replicate draws patients with replacement from its own ChaCha stream
//! (`seed`, stream = replicate index), so results do not depend on how rayon
//! schedules the replicates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 1000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: Option<f64>,
    /// 2.5th percentile over valid replicates.
    pub lower: Option<f64>,
    /// 97.5th percentile over valid replicates.
    pub upper: Option<f64>,
    pub valid: usize,
    pub replicates: usize,
}

/// Patient indices (into the group list) drawn for replicate `rep`.
pub fn replicate_patients(n_patients: usize, seed: u64, rep: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    (0..n_patients).map(|_| rng.gen_range(0..n_patients)).collect()
}

/// Item indices of a replicate: every drawn patient contributes all of its items.
pub fn replicate_items(groups: &[Vec<usize>], patients: &[usize]) -> Vec<usize> {
    patients.iter().flat_map(|&p| groups[p].iter().copied()).collect()
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub(crate) fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Bootstraps several metrics that share one resampling per replicate.
/// `metric` maps item indices to one value per metric; `None` marks a
/// degenerate value (e.g. a class missing from the replicate).
pub fn bootstrap_many<F>(metric: F, groups: &[Vec<usize>], cfg: &BootstrapConfig) -> Result<Vec<BootstrapCi>>
where
    F: Fn(&[usize]) -> Vec<Option<f64>> + Sync,
{
    if groups.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 2 patients, got {}",
            groups.len()
        )));
    }
    if cfg.replicates == 0 {
        return Err(Error::InvalidInput("bootstrap needs at least 1 replicate".into()));
    }
    let all: Vec<usize> = groups.iter().flatten().copied().collect();
    let point = metric(&all);
    let m = point.len();

    let reps: Vec<Vec<Option<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let picks = replicate_patients(groups.len(), cfg.seed, r);
            let v = metric(&replicate_items(groups, &picks));
            debug_assert_eq!(v.len(), m);
            v
        })
        .collect();

    Ok((0..m)
        .map(|j| {
            let mut vals: Vec<f64> = reps
                .iter()
                .filter_map(|r| r[j])
                .filter(|v| v.is_finite())
                .collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lower, upper) = if vals.is_empty() {
                (None, None)
            } else {
                (Some(percentile(&vals, 0.025)), Some(percentile(&vals, 0.975)))
            };
            BootstrapCi {
                point: point[j],
                lower,
                upper,
                valid: vals.len(),
                replicates: cfg.replicates,
            }
        })
        .collect())
}

pub fn bootstrap_ci<F>(metric: F, groups: &[Vec<usize>], cfg: &BootstrapConfig) -> Result<BootstrapCi>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    Ok(bootstrap_many(|idx| vec![metric(idx)], groups, cfg)?.remove(0))
}
