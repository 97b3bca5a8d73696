use lungstack_core::metrics::{
    bootstrap_ci, classification_metrics, evaluate, replicate_items, replicate_patients, roc_auc_binary, roc_auc_ovr,
    BootstrapConfig,
};
use ndarray::Array2;
use proptest::prelude::*;

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(-3.0f64..3.0, n), prop::collection::vec(any::<bool>(), n)))
}

proptest! {
    #[test]
    fn auc_invariant_under_exp_and_affine((scores, pos) in scores_and_labels(), a in 0.1f64..5.0, b in -10.0f64..10.0) {
        let base = roc_auc_binary(&scores, &pos);
        let ex: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
        let af: Vec<f64> = scores.iter().map(|s| a * s + b).collect();
        prop_assert_eq!(base, roc_auc_binary(&ex, &pos));
        prop_assert_eq!(base, roc_auc_binary(&af, &pos));
    }

    #[test]
    fn auc_flips_under_negation((scores, pos) in scores_and_labels()) {
        let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
        if let (Some(a), Some(b)) = (roc_auc_binary(&scores, &pos), roc_auc_binary(&neg, &pos)) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_equals_macro_f1_on_balanced_truth(k in 2usize..5, per in 1usize..8, preds in prop::collection::vec(0usize..5, 40)) {
        let truth: Vec<usize> = (0..k * per).map(|i| i % k).collect();
        let pred: Vec<usize> = truth.iter().enumerate().map(|(i, _)| preds[i % preds.len()] % k).collect();
        let s = classification_metrics(&truth, &pred, k).unwrap();
        prop_assert!((s.weighted_f1 - s.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_keeps_patients_whole(sizes in prop::collection::vec(1usize..6, 2..12), seed in any::<u64>(), rep in 0usize..50) {
        let mut groups = Vec::new();
        let mut next = 0;
        for s in &sizes {
            groups.push((next..next + s).collect::<Vec<usize>>());
            next += s;
        }
        let picks = replicate_patients(groups.len(), seed, rep);
        let items = replicate_items(&groups, &picks);
        // Each item appears exactly as often as its patient was drawn.
        for (p, g) in groups.iter().enumerate() {
            let drawn = picks.iter().filter(|&&q| q == p).count();
            for i in g {
                prop_assert_eq!(items.iter().filter(|&&x| x == *i).count(), drawn);
            }
        }
    }

    #[test]
    fn ovr_macro_in_unit_interval(n in 4usize..30, k in 2usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let p = Array2::from_shape_fn((n, k), |_| rng.gen::<f64>());
        let auc = roc_auc_ovr(&truth, p.view()).unwrap();
        prop_assert!(auc.macro_avg.is_nan() || (0.0..=1.0).contains(&auc.macro_avg));
    }
}

#[test]
fn bootstrap_ci_is_reproducible_and_brackets_the_mean() {
    let values: Vec<f64> = (0..60).map(|i| (i % 7) as f64).collect();
    let groups: Vec<Vec<usize>> = (0..30).map(|p| vec![2 * p, 2 * p + 1]).collect();
    let cfg = BootstrapConfig { replicates: 500, seed: 11 };
    let mean = |rows: &[usize]| Some(rows.iter().map(|&i| values[i]).sum::<f64>() / rows.len() as f64);
    let a = bootstrap_ci(mean, &groups, &cfg).unwrap();
    let b = bootstrap_ci(mean, &groups, &cfg).unwrap();
    assert_eq!(a, b);
    let point = values.iter().sum::<f64>() / values.len() as f64;
    assert!(a.lower.unwrap() <= point && point <= a.upper.unwrap());
}

#[test]
fn report_is_stable_json() {
    let truth = vec![0, 1, 2, 1, 0, 2];
    let probs = ndarray::array![
        [0.7, 0.2, 0.1],
        [0.1, 0.8, 0.1],
        [0.2, 0.2, 0.6],
        [0.5, 0.4, 0.1],
        [0.6, 0.3, 0.1],
        [0.1, 0.1, 0.8]
    ];
    let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let groups: Vec<Vec<usize>> = (0..6).map(|i| vec![i]).collect();
    let cfg = BootstrapConfig { replicates: 200, seed: 7 };
    let r1 = evaluate(&truth, probs.view(), &names, Some((&groups, &cfg))).unwrap();
    let r2 = evaluate(&truth, probs.view(), &names, Some((&groups, &cfg))).unwrap();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
    assert_eq!(r1.confusion, vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 2]]);
}
