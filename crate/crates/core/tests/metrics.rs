mod common;

use std::collections::BTreeSet;

use common::{random_subset, seeded};
use num_rational::Ratio;
use proptest::prelude::*;
use rectify_core::metrics::{prominence_filter, score_sets, ProminenceSpec};
use rectify_core::synth::oracle_metrics;
use rectify_core::{ClassCatalog, Detection, RectifierSet};

fn as_vec(s: &BTreeSet<String>) -> Vec<String> {
    s.iter().cloned().collect()
}

#[test]
fn engine_matches_bruteforce_on_random_pairs() {
    let catalog = ClassCatalog::coco80();
    let mut rng = seeded(1);
    let mut compared = 0;
    for _ in 0..2000 {
        let d = random_subset(&mut rng, &catalog, 0, 12);
        let r = random_subset(&mut rng, &catalog, 0, 12);
        let rec = score_sets("p", &d, &r);
        if r.is_empty() {
            assert!(rec.skipped());
            assert!(oracle_metrics(&as_vec(&d), &as_vec(&r)).is_err());
            continue;
        }
        let (inc, comp) = oracle_metrics(&as_vec(&d), &as_vec(&r)).unwrap();
        assert_eq!(rec.inconsistency(), Some(inc));
        assert_eq!(rec.completeness(), Some(comp));
        compared += 1;
    }
    assert!(compared >= 1000);
}

#[test]
fn inconsistency_can_exceed_one() {
    let d: BTreeSet<String> = ["dog", "cat", "kite", "bus", "car"].iter().map(|s| s.to_string()).collect();
    let r: BTreeSet<String> = ["dog", "person"].iter().map(|s| s.to_string()).collect();
    let rec = score_sets("x", &d, &r);
    assert_eq!(rec.inconsistency(), Some(Ratio::new(4, 2)));
    assert_eq!(rec.completeness(), Some(Ratio::new(1, 2)));
    assert_eq!(rec.coverage_ratio(), Some(Ratio::new(5, 2)));
}

fn rect_strategy() -> impl Strategy<Value = RectifierSet> {
    prop::collection::vec((0usize..80, 0.0f64..=1.0), 0..15).prop_map(|dets| {
        let catalog = ClassCatalog::coco80();
        let detections = dets
            .into_iter()
            .map(|(i, a)| Detection::new(&catalog, &catalog.classes()[i], 0.9, a).unwrap())
            .collect();
        RectifierSet::new("r", detections)
    })
}

fn class_set_strategy() -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set(0usize..80, 0..15).prop_map(|idx| {
        let catalog = ClassCatalog::coco80();
        idx.into_iter().map(|i| catalog.classes()[i].clone()).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn identity_holds(d in class_set_strategy(), r in class_set_strategy()) {
        let rec = score_sets("p", &d, &r);
        if let (Some(i), Some(c), Some(cov)) = (rec.inconsistency(), rec.completeness(), rec.coverage_ratio()) {
            prop_assert_eq!(i + c, cov);
            prop_assert_eq!(cov, Ratio::new(d.len() as u64, r.len() as u64));
        } else {
            prop_assert!(r.is_empty());
        }
    }

    #[test]
    fn bounds(d in class_set_strategy(), r in class_set_strategy()) {
        let rec = score_sets("p", &d, &r);
        if let Some(c) = rec.completeness() {
            prop_assert!(c <= Ratio::from_integer(1));
            prop_assert!(rec.inconsistency().unwrap() <= Ratio::new(d.len() as u64, r.len() as u64));
        }
    }

    #[test]
    fn perfect_explanation(r in class_set_strategy()) {
        let rec = score_sets("p", &r, &r);
        if !r.is_empty() {
            prop_assert_eq!(rec.inconsistency(), Some(Ratio::from_integer(0)));
            prop_assert_eq!(rec.completeness(), Some(Ratio::from_integer(1)));
        }
    }

    #[test]
    fn prominence_nests(rect in rect_strategy(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let low = prominence_filter(&rect, ProminenceSpec::new(lo).unwrap());
        let high = prominence_filter(&rect, ProminenceSpec::new(hi).unwrap());
        prop_assert!(high.class_set().is_subset(low.class_set()));
        prop_assert!(low.class_set().is_subset(rect.class_set()));
        let zero = prominence_filter(&rect, ProminenceSpec::new(0.0).unwrap());
        prop_assert_eq!(zero.class_set(), rect.class_set());
    }
}
