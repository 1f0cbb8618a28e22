//! Dörfler marking against exhaustive subset enumeration.

use afemkit::estimator::Indicators;
use afemkit::marking::{combined_mark, doerfler_binned, doerfler_min, mark, MarkingStrategy};
use proptest::prelude::*;

/// Smallest cardinality of a subset whose squared indicators reach `theta` of the total.
fn oracle_min(v: &[f64], theta: f64) -> usize {
    let total: f64 = v.iter().sum();
    (0u32..1 << v.len())
        .filter(|mask| {
            let s: f64 = (0..v.len())
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| v[i])
                .sum();
            s >= theta * total
        })
        .map(|mask| mask.count_ones() as usize)
        .min()
        .unwrap()
}

fn captures(ind: &Indicators, marked: &[usize], theta: f64) -> bool {
    let s: f64 = marked.iter().map(|&t| ind.values[t]).sum();
    s >= theta * ind.values.iter().sum::<f64>() * (1.0 - 1e-12)
}

fn distinct(marked: &[usize], n: usize) -> bool {
    let mut m = marked.to_vec();
    m.sort_unstable();
    m.dedup();
    m.len() == marked.len() && m.iter().all(|&t| t < n)
}

fn indicator_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            3 => 0.0f64..1.0,
            1 => (0.0f64..1.0).prop_map(|x| x.powi(6)),
            1 => (0u32..4).prop_map(|k| k as f64 * 0.25),
        ],
        1..=max_len,
    )
    .prop_filter("nonzero total", |v| v.iter().sum::<f64>() > 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn minimal_marking_matches_exhaustive_search(v in indicator_vec(15), theta in 0.01f64..=1.0) {
        let ind = Indicators { values: v };
        let m = doerfler_min(&ind, theta).unwrap();
        prop_assert!(distinct(&m, ind.len()));
        prop_assert!(captures(&ind, &m, theta));
        prop_assert_eq!(m.len(), oracle_min(&ind.values, theta));
    }

    #[test]
    fn binned_marking_is_within_twice_the_minimum(v in indicator_vec(200), theta in 0.01f64..=1.0) {
        let ind = Indicators { values: v };
        let b = doerfler_binned(&ind, theta).unwrap();
        let m = doerfler_min(&ind, theta).unwrap();
        prop_assert!(distinct(&b, ind.len()));
        prop_assert!(captures(&ind, &b, theta));
        prop_assert!(b.len() <= 2 * m.len());
        prop_assert_eq!(mark(&ind, theta, MarkingStrategy::Binned).unwrap().len(), b.len());
    }

    #[test]
    fn combined_marking_satisfies_doerfler_for_one_of_the_estimators(
        v in indicator_vec(60),
        w in indicator_vec(60),
        theta in 0.05f64..=1.0,
    ) {
        let n = v.len().min(w.len());
        let p = Indicators { values: v[..n].to_vec() };
        let d = Indicators { values: w[..n].to_vec() };
        prop_assume!(p.total() > 0.0 && d.total() > 0.0);
        let m = combined_mark(&p, &d, theta).unwrap();
        prop_assert!(distinct(&m, n));
        prop_assert!(captures(&p, &m, theta) || captures(&d, &m, theta));
    }
}

#[test]
fn invalid_theta_is_rejected() {
    let ind = Indicators {
        values: vec![1.0, 2.0],
    };
    for theta in [0.0, -0.1, 1.5, f64::NAN] {
        assert!(doerfler_min(&ind, theta).is_err());
        assert!(doerfler_binned(&ind, theta).is_err());
    }
}

#[test]
fn theta_one_marks_every_element_with_a_positive_indicator() {
    let ind = Indicators {
        values: vec![0.3, 0.0, 0.1, 0.6],
    };
    let mut m = doerfler_min(&ind, 1.0).unwrap();
    m.sort_unstable();
    assert_eq!(m, vec![0, 2, 3]);
}
