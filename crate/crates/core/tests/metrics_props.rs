use ood3d::metrics::{aupr, auroc, evaluate, fpr95, fpr_at_tpr, Positives, ScoredSample};
use proptest::prelude::*;

fn samples() -> impl Strategy<Value = Vec<ScoredSample<f64>>> {
    prop::collection::vec((0u32..50, any::<bool>()), 2..300).prop_map(|v| {
        let mut s: Vec<ScoredSample<f64>> = v.into_iter().map(|(k, o)| ScoredSample::new(f64::from(k) / 10.0, o)).collect();
        s[0].is_open = true;
        s[1].is_open = false;
        s
    })
}

fn tie_free() -> impl Strategy<Value = Vec<ScoredSample<f64>>> {
    prop::collection::vec(any::<bool>(), 2..300).prop_map(|v| {
        // a fixed pseudo-random ordering of distinct scores
        let n = v.len();
        let mut s: Vec<ScoredSample<f64>> = v.into_iter().enumerate().map(|(i, o)| ScoredSample::new(((i * 7919) % 10_007) as f64, o)).collect();
        s[0].is_open = true;
        s[n - 1].is_open = false;
        s
    })
}

fn pair_count(s: &[ScoredSample<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for o in s.iter().filter(|x| x.is_open) {
        for c in s.iter().filter(|x| !x.is_open) {
            den += 1.0;
            num += if o.score > c.score { 1.0 } else if o.score == c.score { 0.5 } else { 0.0 };
        }
    }
    num / den
}

proptest! {
    #[test]
    fn auroc_equals_pair_count(s in samples()) {
        prop_assert!((auroc(&s).unwrap() - pair_count(&s)).abs() <= 1e-12);
    }

    #[test]
    fn auroc_invariant_under_increasing_transform(s in samples()) {
        let t: Vec<ScoredSample<f64>> = s.iter().map(|x| ScoredSample::new((x.score * 0.7).exp() * 3.0 - 11.0, x.is_open)).collect();
        prop_assert!((auroc(&s).unwrap() - auroc(&t).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn flipped_labels_complement_auroc(s in tie_free()) {
        let f: Vec<ScoredSample<f64>> = s.iter().map(|x| ScoredSample::new(x.score, !x.is_open)).collect();
        prop_assert!((auroc(&f).unwrap() - (1.0 - auroc(&s).unwrap())).abs() <= 1e-12);
    }

    #[test]
    fn shifting_open_scores_up_never_raises_fpr95(s in samples(), c in 0.0..3.0f64) {
        let shifted: Vec<ScoredSample<f64>> = s.iter().map(|x| ScoredSample::new(x.score + if x.is_open { c } else { 0.0 }, x.is_open)).collect();
        prop_assert!(fpr95(&shifted).unwrap() <= fpr95(&s).unwrap() + 1e-12);
    }

    #[test]
    fn metrics_stay_in_unit_range(s in samples(), target in 0.01..1.0f64) {
        let r = evaluate(&s).unwrap();
        for v in [r.auroc, r.fpr95, r.aupr_e, r.aupr_s, fpr_at_tpr(&s, target).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn perfect_and_constant_scores() {
    let perfect: Vec<ScoredSample<f64>> = (0..20).map(|i| ScoredSample::new(f64::from(i), i >= 15)).collect();
    let r = evaluate(&perfect).unwrap();
    for (got, want) in [(r.auroc, 1.0), (r.fpr95, 0.0), (r.aupr_e, 1.0), (r.aupr_s, 1.0)] {
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }
    let flat: Vec<ScoredSample<f64>> = (0..20).map(|i| ScoredSample::new(0.3, i % 4 == 0)).collect();
    assert_eq!(auroc(&flat).unwrap(), 0.5);
    assert_eq!(fpr95(&flat).unwrap(), 1.0);
}

#[test]
fn aupr_s_near_one_when_closed_dominate() {
    // 1000 closed scored low, 20 open mostly high: the closed side ranks almost perfectly
    let mut s: Vec<ScoredSample<f64>> = (0..1000).map(|i| ScoredSample::new(f64::from(i) / 1000.0, false)).collect();
    s.extend((0..20).map(|i| ScoredSample::new(0.9 + f64::from(i) / 10.0, true)));
    let r = aupr(&s, Positives::Closed).unwrap();
    assert!(r > 0.99, "{r}");
}

#[test]
fn single_class_is_an_error() {
    let s = vec![ScoredSample::new(0.1, true), ScoredSample::new(0.2, true)];
    assert!(auroc(&s).is_err());
    assert!(aupr(&s, Positives::Closed).is_err());
}
