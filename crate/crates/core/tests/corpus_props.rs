use std::collections::BTreeMap;

use lungstack_core::corpus::{
    chi_square_test, curate, mann_whitney_u, map_label, split_cohort, EventLabel, LabelTaxonomy, Stratum,
};
use lungstack_core::synth::{synth_cohort, SynthSpec};
use proptest::prelude::*;

fn small_cohort(seed: u64) -> lungstack_core::corpus::Corpus {
    synth_cohort(&SynthSpec {
        n_patients: 24,
        events_per_patient: (2, 5),
        seed,
        ..Default::default()
    })
    .unwrap()
    .corpus
}

#[test]
fn synthetic_cohort_is_a_curation_fixed_point() {
    let c = small_cohort(1);
    let (once, report) = curate(&c).unwrap();
    assert!(report.duplicates.is_empty() && report.poor_quality.is_empty());
    assert_eq!(once.events(), c.events());
    let (twice, _) = curate(&once).unwrap();
    assert_eq!(twice.events(), once.events());
    assert_eq!(twice.patients(), once.patients());
}

#[test]
fn taxonomies_are_total_and_count_preserving() {
    let c = small_cohort(2);
    for tax in [LabelTaxonomy::screening(), LabelTaxonomy::sound_pattern(), LabelTaxonomy::event_type_6()] {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut excluded = 0;
        for e in c.events() {
            let a = map_label(e.label.as_str(), &tax).unwrap();
            assert_eq!(a, map_label(e.label.as_str(), &tax).unwrap());
            match a {
                Some(name) => *counts.entry(name.to_string()).or_default() += 1,
                None => excluded += 1,
            }
        }
        assert_eq!(counts.values().sum::<usize>() + excluded, c.events().len());
        for l in EventLabel::ALL {
            assert!(map_label(l.as_str(), &tax).is_ok());
        }
    }
}

#[test]
fn chi_square_zero_iff_proportional() {
    let t = vec![vec![10.0, 20.0], vec![30.0, 60.0]];
    assert_eq!(chi_square_test(&t).statistic, 0.0);
    assert!(chi_square_test(&[vec![10.0, 20.0], vec![30.0, 50.0]]).statistic > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn split_never_straddles_a_patient(seed in any::<u64>(), frac in 0.1f64..0.5) {
        let c = small_cohort(seed % 5);
        let (s, _) = split_cohort(&c, frac, &[Stratum::DiseaseGroup], seed).unwrap();
        prop_assert!(s.train_patient_ids.is_disjoint(&s.test_patient_ids));
        prop_assert_eq!(s.train_patient_ids.len() + s.test_patient_ids.len(), c.patients().len());
        for e in c.events() {
            let p = &c.patient_of_event(e).patient_id;
            prop_assert!(s.train_patient_ids.contains(p) != s.test_patient_ids.contains(p));
        }
    }

    #[test]
    fn mann_whitney_on_identical_samples(x in prop::collection::vec(-5.0f64..5.0, 1..20)) {
        let mw = mann_whitney_u(&x, &x).unwrap();
        let n = x.len() as f64;
        prop_assert!((mw.u - n * n / 2.0).abs() < 1e-9);
    }

    #[test]
    fn mann_whitney_u_statistics_are_complementary(
        x in prop::collection::vec(-5.0f64..5.0, 1..20),
        y in prop::collection::vec(-5.0f64..5.0, 1..20),
    ) {
        let a = mann_whitney_u(&x, &y).unwrap();
        let b = mann_whitney_u(&y, &x).unwrap();
        prop_assert!((a.u + b.u - (x.len() * y.len()) as f64).abs() < 1e-9);
        prop_assert!((a.p_value - b.p_value).abs() < 1e-9);
    }
}
