//! Tree-structured Parzen estimator for maximizing a black-box objective.
//!
//! Each dimension is searched independently in a unit interval (log-mapped
//! where requested). After `n_startup` random trials, observations are split
//! into the best `gamma` share and the rest; candidates are drawn from the
//! good-set Parzen mixture and the one maximizing l(x)/g(x) is proposed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dim {
    Int { lo: i64, hi: i64 },
    Float { lo: f64, hi: f64, log: bool },
}

impl Dim {
    fn decode(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Dim::Int { lo, hi } => (lo as f64 + u * (hi - lo) as f64).round().clamp(lo as f64, hi as f64),
            Dim::Float { lo, hi, log: true } => (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi),
            Dim::Float { lo, hi, log: false } => (lo + u * (hi - lo)).clamp(lo, hi),
        }
    }

    fn encode(&self, v: f64) -> f64 {
        let u = match *self {
            Dim::Int { lo, hi } if hi > lo => (v - lo as f64) / (hi - lo) as f64,
            Dim::Int { .. } => 0.5,
            Dim::Float { lo, hi, log: true } => (v.ln() - lo.ln()) / (hi.ln() - lo.ln()),
            Dim::Float { lo, hi, log: false } => (v - lo) / (hi - lo),
        };
        u.clamp(0.0, 1.0)
    }
}

/// Gaussian mixture over [0, 1] with a broad prior component.
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Parzen {
    fn new(points: &[f64]) -> Self {
        let mut mus: Vec<f64> = points.to_vec();
        mus.push(0.5);
        let mut order: Vec<usize> = (0..mus.len()).collect();
        order.sort_by(|&a, &b| mus[a].partial_cmp(&mus[b]).unwrap());
        let min_sigma = 1.0 / (mus.len() as f64 + 1.0).min(100.0);
        let mut sigmas = vec![0.0; mus.len()];
        for (pos, &i) in order.iter().enumerate() {
            let left = if pos == 0 { mus[i] } else { mus[i] - mus[order[pos - 1]] };
            let right = if pos + 1 == order.len() {
                1.0 - mus[i]
            } else {
                mus[order[pos + 1]] - mus[i]
            };
            sigmas[i] = left.max(right).clamp(min_sigma, 1.0);
        }
        // The prior stays wide.
        let prior = mus.len() - 1;
        sigmas[prior] = 1.0;
        Parzen { mus, sigmas }
    }

    fn pdf(&self, x: f64) -> f64 {
        let n = self.mus.len() as f64;
        self.mus
            .iter()
            .zip(&self.sigmas)
            .map(|(m, s)| {
                let z = (x - m) / s;
                (-0.5 * z * z).exp() / s
            })
            .sum::<f64>()
            / n
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let i = rng.gen_range(0..self.mus.len());
        let d = Normal::new(self.mus[i], self.sigmas[i]).expect("positive sigma");
        // Truncate by rejection, falling back to clamping.
        for _ in 0..16 {
            let v = d.sample(rng);
            if (0.0..=1.0).contains(&v) {
                return v;
            }
        }
        d.sample(rng).clamp(0.0, 1.0)
    }
}

pub struct Tpe {
    dims: Vec<Dim>,
    rng: ChaCha8Rng,
    pub n_startup: usize,
    pub gamma: f64,
    pub n_candidates: usize,
    history: Vec<(Vec<f64>, f64)>,
}

impl Tpe {
    pub fn new(dims: Vec<Dim>, seed: u64) -> Self {
        Tpe {
            dims,
            rng: ChaCha8Rng::seed_from_u64(seed),
            n_startup: 10,
            gamma: 0.25,
            n_candidates: 24,
            history: Vec::new(),
        }
    }

    /// Next point to evaluate, in natural units.
    pub fn ask(&mut self) -> Vec<f64> {
        let unit: Vec<f64> = if self.history.len() < self.n_startup {
            (0..self.dims.len()).map(|_| self.rng.gen::<f64>()).collect()
        } else {
            let mut sorted: Vec<&(Vec<f64>, f64)> = self.history.iter().collect();
            // Best first; stable so ties keep trial order.
            sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            let n_good = ((self.gamma * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len() - 1);
            (0..self.dims.len())
                .map(|d| {
                    let good: Vec<f64> = sorted[..n_good].iter().map(|h| h.0[d]).collect();
                    let bad: Vec<f64> = sorted[n_good..].iter().map(|h| h.0[d]).collect();
                    let (l, g) = (Parzen::new(&good), Parzen::new(&bad));
                    let mut best = (f64::NEG_INFINITY, 0.5);
                    for _ in 0..self.n_candidates {
                        let x = l.sample(&mut self.rng);
                        let score = l.pdf(x).ln() - g.pdf(x).max(1e-300).ln();
                        if score > best.0 {
                            best = (score, x);
                        }
                    }
                    best.1
                })
                .collect()
        };
        self.dims.iter().zip(&unit).map(|(d, &u)| d.decode(u)).collect()
    }

    /// Records the objective value (higher is better) of a point from `ask`.
    pub fn tell(&mut self, point: &[f64], value: f64) {
        let unit = self.dims.iter().zip(point).map(|(d, &v)| d.encode(v)).collect();
        let value = if value.is_finite() { value } else { f64::NEG_INFINITY };
        self.history.push((unit, value));
    }

    pub fn n_observed(&self) -> usize {
        self.history.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Vec<Dim> {
        vec![
            Dim::Int { lo: 3, hi: 15 },
            Dim::Float {
                lo: 0.01,
                hi: 0.3,
                log: true,
            },
        ]
    }

    #[test]
    fn proposals_stay_in_range() {
        let mut t = Tpe::new(dims(), 1);
        for i in 0..60 {
            let p = t.ask();
            assert!((3.0..=15.0).contains(&p[0]) && p[0].fract() == 0.0);
            assert!((0.01..=0.3).contains(&p[1]));
            t.tell(&p, -(i as f64 % 7.0));
        }
    }

    #[test]
    fn concentrates_near_optimum() {
        // Maximize -(x - 0.8)^2 on a plain interval.
        let d = vec![Dim::Float {
            lo: 0.0,
            hi: 1.0,
            log: false,
        }];
        let mut t = Tpe::new(d.clone(), 4);
        let mut late = Vec::new();
        for i in 0..80 {
            let p = t.ask();
            if i >= 50 {
                late.push(p[0]);
            }
            t.tell(&p, -(p[0] - 0.8).powi(2));
        }
        let mean_err = late.iter().map(|x| (x - 0.8).abs()).sum::<f64>() / late.len() as f64;
        // Uniform sampling would give about 0.34.
        assert!(mean_err < 0.15, "{mean_err}");
    }

    #[test]
    fn deterministic_per_seed() {
        let run = || {
            let mut t = Tpe::new(dims(), 9);
            (0..20)
                .map(|i| {
                    let p = t.ask();
                    t.tell(&p, p[1] * i as f64);
                    p
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn encode_decode_roundtrip() {
        for d in dims() {
            for u in [0.0, 0.25, 0.5, 1.0] {
                let v = d.decode(u);
                assert!((d.decode(d.encode(v)) - v).abs() < 1e-12);
            }
        }
    }
}
