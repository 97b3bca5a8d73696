//! Histogram gradient-boosted decision trees with a softmax objective.
//!
//! Trees grow leaf-wise (best-gain leaf first) up to `num_leaves` leaves and
//! `max_depth` levels. Each round fits one tree per class to the softmax
//! gradients with second-order leaf values `-G / (H + lambda)`.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::softmax_rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub num_leaves: usize,
    pub min_child_samples: usize,
    /// Row sampling rate per round.
    pub subsample: f64,
    /// Feature sampling rate per tree.
    pub colsample: f64,
    /// Stop when the eval loss has not improved for this many rounds.
    pub early_stopping_rounds: usize,
    pub lambda_l2: f64,
    pub max_bins: usize,
    pub seed: u64,
}

impl Default for GbdtParams {
    /// Mid-range values of the search space.
    fn default() -> Self {
        GbdtParams {
            n_estimators: 275,
            max_depth: 9,
            learning_rate: (0.01f64 * 0.3).sqrt(),
            num_leaves: 157,
            min_child_samples: 52,
            subsample: 0.8,
            colsample: 0.8,
            early_stopping_rounds: 20,
            lambda_l2: 1.0,
            max_bins: 64,
            seed: 0,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_estimators >= 1
            && self.max_depth >= 1
            && self.learning_rate > 0.0
            && self.num_leaves >= 2
            && self.min_child_samples >= 1
            && self.subsample > 0.0
            && self.subsample <= 1.0
            && self.colsample > 0.0
            && self.colsample <= 1.0
            && self.lambda_l2 >= 0.0
            && (2..=255).contains(&self.max_bins);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid boosting parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    fn depth(&self, i: usize) -> usize {
        match &self.nodes[i] {
            Node::Leaf(_) => 0,
            Node::Split { left, right, .. } => 1 + self.depth(*left).max(self.depth(*right)),
        }
    }

    pub fn max_depth(&self) -> usize {
        self.depth(0)
    }
}

/// Per-feature bin upper edges; the last edge is +inf.
#[derive(Debug, Clone)]
struct Binner {
    edges: Vec<Vec<f64>>,
}

impl Binner {
    fn fit(x: &ArrayView2<f64>, max_bins: usize) -> Self {
        let edges = x
            .columns()
            .into_iter()
            .map(|col| {
                let mut v: Vec<f64> = col.to_vec();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let mut distinct = v.clone();
                distinct.dedup();
                let mut e: Vec<f64> = if distinct.len() <= max_bins {
                    distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
                } else {
                    let mut cuts: Vec<f64> = (1..max_bins)
                        .map(|j| v[(j * (v.len() - 1)) / max_bins])
                        .collect();
                    cuts.dedup();
                    cuts
                };
                e.push(f64::INFINITY);
                e
            })
            .collect();
        Binner { edges }
    }

    fn bin(&self, x: &ArrayView2<f64>) -> Vec<Vec<u8>> {
        self.edges
            .iter()
            .enumerate()
            .map(|(f, e)| x.column(f).iter().map(|&v| e.partition_point(|&b| b < v) as u8).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    feature: usize,
    bin: usize,
    gain: f64,
}

struct Leaf {
    node: usize,
    rows: Vec<u32>,
    depth: usize,
    best: Option<Candidate>,
}

struct Grower<'a> {
    bins: &'a [Vec<u8>],
    edges: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    features: &'a [usize],
    p: &'a GbdtParams,
}

impl Grower<'_> {
    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.p.lambda_l2)
    }

    fn best_split(&self, rows: &[u32], depth: usize) -> Option<Candidate> {
        if depth >= self.p.max_depth || rows.len() < 2 * self.p.min_child_samples {
            return None;
        }
        let (gt, ht): (f64, f64) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r as usize], h + self.hess[r as usize]));
        let parent = self.score(gt, ht);
        let mut best: Option<Candidate> = None;
        for &f in self.features {
            let nb = self.edges[f].len();
            if nb < 2 {
                continue;
            }
            let mut hg = vec![0.0; nb];
            let mut hh = vec![0.0; nb];
            let mut hc = vec![0usize; nb];
            let col = &self.bins[f];
            for &r in rows {
                let b = col[r as usize] as usize;
                hg[b] += self.grad[r as usize];
                hh[b] += self.hess[r as usize];
                hc[b] += 1;
            }
            let (mut gl, mut hl, mut cl) = (0.0, 0.0, 0usize);
            for b in 0..nb - 1 {
                gl += hg[b];
                hl += hh[b];
                cl += hc[b];
                let cr = rows.len() - cl;
                if cl < self.p.min_child_samples {
                    continue;
                }
                if cr < self.p.min_child_samples {
                    break;
                }
                let hr = ht - hl;
                if hl < 1e-3 || hr < 1e-3 {
                    continue;
                }
                let gain = self.score(gl, hl) + self.score(gt - gl, hr) - parent;
                if gain > 1e-12 && best.map_or(true, |c| gain > c.gain) {
                    best = Some(Candidate { feature: f, bin: b, gain });
                }
            }
        }
        best
    }

    fn leaf_value(&self, rows: &[u32]) -> f64 {
        let (g, h) = rows
            .iter()
            .fold((0.0, 0.0), |(g, h), &r| (g + self.grad[r as usize], h + self.hess[r as usize]));
        -g / (h + self.p.lambda_l2) * self.p.learning_rate
    }

    fn grow(&self, rows: Vec<u32>) -> Tree {
        let mut nodes = vec![Node::Leaf(0.0)];
        let best = self.best_split(&rows, 0);
        let mut leaves = vec![Leaf {
            node: 0,
            rows,
            depth: 0,
            best,
        }];
        while leaves.len() < self.p.num_leaves {
            let pick = leaves
                .iter()
                .enumerate()
                .filter_map(|(i, l)| l.best.map(|c| (i, c.gain)))
                .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                    Some((_, bg)) if bg >= g => acc,
                    _ => Some((i, g)),
                });
            let Some((li, _)) = pick else { break };
            let leaf = leaves.swap_remove(li);
            let c = leaf.best.unwrap();
            let col = &self.bins[c.feature];
            let (lrows, rrows): (Vec<u32>, Vec<u32>) =
                leaf.rows.iter().partition(|&&r| (col[r as usize] as usize) <= c.bin);
            let left = nodes.len();
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[leaf.node] = Node::Split {
                feature: c.feature,
                threshold: self.edges[c.feature][c.bin],
                gain: c.gain,
                left,
                right: left + 1,
            };
            for (node, rows) in [(left, lrows), (left + 1, rrows)] {
                let best = self.best_split(&rows, leaf.depth + 1);
                leaves.push(Leaf {
                    node,
                    rows,
                    depth: leaf.depth + 1,
                    best,
                });
            }
        }
        for l in &leaves {
            nodes[l.node] = Node::Leaf(self.leaf_value(&l.rows));
        }
        Tree { nodes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gbdt {
    pub n_classes: usize,
    pub n_features: usize,
    pub params: GbdtParams,
    init: Vec<f64>,
    /// `rounds[r][c]`: tree of class c in round r.
    rounds: Vec<Vec<Tree>>,
    /// Eval-set multi-logloss per round, when an eval set was given.
    pub eval_history: Vec<f64>,
}

fn check_xy(x: &ArrayView2<f64>, y: &[usize], k: usize) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("features must be finite".into()));
    }
    Ok(())
}

fn log_loss(raw: &Array2<f64>, y: &[usize]) -> f64 {
    let mut p = raw.clone();
    softmax_rows(&mut p);
    -y.iter()
        .enumerate()
        .map(|(i, &c)| p[[i, c]].max(1e-15).ln())
        .sum::<f64>()
        / y.len() as f64
}

impl Gbdt {
    /// Fits on `(x, y)`. With an eval set, training stops once its log-loss
    /// has not improved for `early_stopping_rounds` rounds and the model is
    /// truncated to the best round.
    pub fn fit(
        x: ArrayView2<f64>,
        y: &[usize],
        k: usize,
        params: &GbdtParams,
        eval: Option<(ArrayView2<f64>, &[usize])>,
    ) -> Result<Gbdt> {
        params.validate()?;
        check_xy(&x, y, k)?;
        if x.nrows() == 0 {
            return Err(Error::Empty("boosting needs training rows".into()));
        }
        if let Some((ex, ey)) = &eval {
            check_xy(ex, ey, k)?;
        }
        let x = x.as_standard_layout();
        let ex_std = eval.as_ref().map(|(ex, _)| ex.as_standard_layout().to_owned());
        let n = x.nrows();
        let nf = x.ncols();
        let binner = Binner::fit(&x.view(), params.max_bins);
        let bins = binner.bin(&x.view());

        let mut counts = vec![0usize; k];
        for &c in y {
            counts[c] += 1;
        }
        let init: Vec<f64> = counts
            .iter()
            .map(|&c| ((c as f64 + 1.0) / (n as f64 + k as f64)).ln())
            .collect();
        let mut raw = Array2::from_shape_fn((n, k), |(_, c)| init[c]);
        let mut eval_raw = eval
            .as_ref()
            .map(|(ex, _)| Array2::from_shape_fn((ex.nrows(), k), |(_, c)| init[c]));

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut rounds: Vec<Vec<Tree>> = Vec::new();
        let mut eval_history = Vec::new();
        let mut best = (f64::INFINITY, 0usize);
        let n_cols = ((nf as f64 * params.colsample).ceil() as usize).clamp(1, nf);
        let all_features: Vec<usize> = (0..nf).collect();

        for round in 0..params.n_estimators {
            let mut prob = raw.clone();
            softmax_rows(&mut prob);
            let rows: Vec<u32> = if params.subsample < 1.0 {
                (0..n as u32).filter(|_| rng.gen::<f64>() < params.subsample).collect()
            } else {
                (0..n as u32).collect()
            };
            let mut trees = Vec::with_capacity(k);
            for c in 0..k {
                let grad: Vec<f64> = (0..n).map(|i| prob[[i, c]] - f64::from(u8::from(y[i] == c))).collect();
                let hess: Vec<f64> = (0..n).map(|i| (prob[[i, c]] * (1.0 - prob[[i, c]])).max(1e-16)).collect();
                let mut features = all_features.clone();
                if n_cols < nf {
                    features.shuffle(&mut rng);
                    features.truncate(n_cols);
                    features.sort_unstable();
                }
                let grower = Grower {
                    bins: &bins,
                    edges: &binner.edges,
                    grad: &grad,
                    hess: &hess,
                    features: &features,
                    p: params,
                };
                trees.push(grower.grow(rows.clone()));
            }
            for (c, t) in trees.iter().enumerate() {
                for i in 0..n {
                    raw[[i, c]] += t.predict_row(x.row(i).as_slice().expect("standard layout"));
                }
                if let (Some(er), Some(ex)) = (eval_raw.as_mut(), ex_std.as_ref()) {
                    for i in 0..ex.nrows() {
                        er[[i, c]] += t.predict_row(ex.row(i).as_slice().expect("standard layout"));
                    }
                }
            }
            rounds.push(trees);
            if let (Some(er), Some((_, ey))) = (eval_raw.as_ref(), eval.as_ref()) {
                let loss = log_loss(er, ey);
                eval_history.push(loss);
                if loss < best.0 - 1e-12 {
                    best = (loss, round + 1);
                } else if round + 1 - best.1 >= params.early_stopping_rounds.max(1) {
                    break;
                }
            }
        }
        if eval.is_some() {
            rounds.truncate(best.1.max(1));
        }
        Ok(Gbdt {
            n_classes: k,
            n_features: nf,
            params: params.clone(),
            init,
            rounds,
            eval_history,
        })
    }

    pub fn n_rounds(&self) -> usize {
        self.rounds.len()
    }

    pub fn trees(&self) -> impl Iterator<Item = &Tree> {
        self.rounds.iter().flatten()
    }

    pub fn predict_raw(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                actual: x.ncols(),
            });
        }
        let x = x.as_standard_layout();
        let mut raw = Array2::from_shape_fn((x.nrows(), self.n_classes), |(_, c)| self.init[c]);
        for i in 0..x.nrows() {
            let row = x.row(i);
            let row = row.as_slice().expect("standard layout");
            for trees in &self.rounds {
                for (c, t) in trees.iter().enumerate() {
                    raw[[i, c]] += t.predict_row(row);
                }
            }
        }
        Ok(raw)
    }

    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut p = self.predict_raw(x)?;
        softmax_rows(&mut p);
        Ok(p)
    }

    /// Total split gain per feature (unnormalized).
    pub fn gain_importance(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for t in self.trees() {
            for node in &t.nodes {
                if let Node::Split { feature, gain, .. } = node {
                    imp[*feature] += gain;
                }
            }
        }
        imp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::argmax_rows;

    fn toy(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen::<f64>());
        // Class from feature 0 thresholds; features 1, 2 are noise.
        let y = x.column(0).iter().map(|&v| if v < 0.33 { 0 } else if v < 0.66 { 1 } else { 2 }).collect();
        (x, y)
    }

    fn small_params() -> GbdtParams {
        GbdtParams {
            n_estimators: 60,
            learning_rate: 0.2,
            num_leaves: 8,
            min_child_samples: 5,
            subsample: 1.0,
            colsample: 1.0,
            ..Default::default()
        }
    }

    #[test]
    fn learns_threshold_rule_and_ranks_signal_feature() {
        let (x, y) = toy(300, 1);
        let m = Gbdt::fit(x.view(), &y, 3, &small_params(), None).unwrap();
        let (tx, ty) = toy(200, 2);
        let p = m.predict_proba(tx.view()).unwrap();
        let acc = argmax_rows(&p).iter().zip(&ty).filter(|(a, b)| a == b).count() as f64 / 200.0;
        assert!(acc > 0.93, "{acc}");
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
        let imp = m.gain_importance();
        assert!(imp[0] > 10.0 * (imp[1] + imp[2]));
    }

    #[test]
    fn respects_structure_limits() {
        let (x, y) = toy(300, 3);
        let p = GbdtParams {
            max_depth: 2,
            num_leaves: 30,
            ..small_params()
        };
        let m = Gbdt::fit(x.view(), &y, 3, &p, None).unwrap();
        assert!(m.trees().all(|t| t.max_depth() <= 2 && t.n_leaves() <= 4));
        let p = GbdtParams {
            num_leaves: 3,
            max_depth: 10,
            ..small_params()
        };
        let m = Gbdt::fit(x.view(), &y, 3, &p, None).unwrap();
        assert!(m.trees().all(|t| t.n_leaves() <= 3));
    }

    #[test]
    fn constant_feature_never_split() {
        let (mut x, y) = toy(200, 4);
        x.column_mut(2).fill(1.0);
        let m = Gbdt::fit(x.view(), &y, 3, &small_params(), None).unwrap();
        assert_eq!(m.gain_importance()[2], 0.0);
    }

    #[test]
    fn early_stopping_truncates() {
        let (x, y) = toy(200, 5);
        let (ex, ey) = toy(100, 6);
        let p = GbdtParams {
            n_estimators: 400,
            learning_rate: 0.3,
            early_stopping_rounds: 5,
            ..small_params()
        };
        let m = Gbdt::fit(x.view(), &y, 3, &p, Some((ex.view(), &ey))).unwrap();
        assert!(m.n_rounds() < 400);
        assert!(m.eval_history.len() >= m.n_rounds());
    }

    #[test]
    fn deterministic_with_sampling() {
        let (x, y) = toy(150, 7);
        let p = GbdtParams {
            subsample: 0.7,
            colsample: 0.67,
            ..small_params()
        };
        let a = Gbdt::fit(x.view(), &y, 3, &p, None).unwrap();
        let b = Gbdt::fit(x.view(), &y, 3, &p, None).unwrap();
        assert_eq!(a, b);
    }
}
