use lungstack_core::aggregator::{aggregate_patients, ensemble_patient_prediction, majority_gate, VotingConfig};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// n x k matrix of random probability rows.
fn patient() -> impl Strategy<Value = Array2<f64>> {
    (1usize..30, 2usize..5).prop_flat_map(|(n, k)| {
        prop::collection::vec(prop::collection::vec(0.001f64..1.0, k), n).prop_map(move |rows| {
            Array2::from_shape_fn((rows.len(), k), |(i, c)| rows[i][c] / rows[i].iter().sum::<f64>())
        })
    })
}

/// Patients whose events mostly agree confidently on one class, so the gate
/// is active often enough to be worth probing.
fn confident_patient() -> impl Strategy<Value = Array2<f64>> {
    (2usize..5, 0usize..4).prop_flat_map(|(k, modal)| {
        let modal = modal % k;
        prop::collection::vec((any::<bool>(), 0.72f64..0.99, prop::collection::vec(0.001f64..1.0, k)), 1..25).prop_map(
            move |rows| {
                let mut m = Array2::zeros((rows.len(), k));
                for (i, (confident, c, raw)) in rows.iter().enumerate() {
                    let s: f64 = raw.iter().sum();
                    for j in 0..k {
                        m[[i, j]] = if *confident {
                            if j == modal { *c } else { (1.0 - c) / (k - 1) as f64 }
                        } else {
                            raw[j] / s
                        };
                    }
                }
                m
            },
        )
    })
}

proptest! {
    #[test]
    fn permutation_invariant(p in patient(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let cfg = VotingConfig::default();
        let mut order: Vec<usize> = (0..p.nrows()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let q = p.select(ndarray::Axis(0), &order);
        let a = ensemble_patient_prediction("x", p.view(), &cfg).unwrap();
        let b = ensemble_patient_prediction("x", q.view(), &cfg).unwrap();
        prop_assert_eq!(a.class, b.class);
        prop_assert_eq!(a.trace.gate.active, b.trace.gate.active);
        for (x, y) in a.probs.iter().zip(&b.probs) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adding_agreeing_confident_event_keeps_gate_active(p in confident_patient(), conf in 0.7001f64..1.0) {
        let cfg = VotingConfig::default();
        let g = majority_gate(p.view(), &cfg).unwrap();
        prop_assume!(g.active);
        let k = p.ncols();
        let mut extra = vec![(1.0 - conf) / (k - 1) as f64; k];
        extra[g.modal_class] = conf;
        let mut q = p.clone();
        q.push_row(ndarray::ArrayView1::from(&extra)).unwrap();
        let h = majority_gate(q.view(), &cfg).unwrap();
        prop_assert!(h.active);
        prop_assert_eq!(h.modal_class, g.modal_class);
    }
}

#[test]
fn thousand_patients_on_simplex() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = VotingConfig::default();
    let k = 4;
    let mut rows = Vec::new();
    let mut groups = Vec::new();
    for pid in 0..1000 {
        let n = rng.gen_range(1..=30);
        let start = rows.len();
        for _ in 0..n {
            let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            rows.push(raw.into_iter().map(|v| v / s).collect::<Vec<_>>());
        }
        groups.push((format!("p{pid:04}"), (start..rows.len()).collect::<Vec<_>>()));
    }
    let probs = Array2::from_shape_fn((rows.len(), k), |(i, c)| rows[i][c]);
    let preds = aggregate_patients(probs.view(), &groups, &cfg).unwrap();
    assert_eq!(preds.len(), 1000);
    for p in preds {
        let s: f64 = p.probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12, "{} sums to {s}", p.patient_id);
        assert!(p.probs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
