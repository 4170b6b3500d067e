mod common;

use ood3d::io::{RunConfig, SortMode};
use ood3d::matcher::{assign, hit_rates, match_scan, match_scans};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg(d: f64, delta: f64, sort: SortMode) -> RunConfig {
    RunConfig { d_thresh: d, delta_thresh: delta, sort_mode: sort, ..RunConfig::default() }
}

proptest! {
    #[test]
    fn raising_delta_keeps_a_prefix_of_pairs(seed in any::<u64>(), lo in 0.0..0.5f64, step in 0.0..0.5f64, d in 0.5..4.0f64) {
        let scan = common::rand_scan(&mut ChaCha8Rng::seed_from_u64(seed), 0, 8, 10);
        let low = match_scan(&scan, &cfg(d, lo, SortMode::DetectorScore)).unwrap();
        let high = match_scan(&scan, &cfg(d, lo + step, SortMode::DetectorScore)).unwrap();
        prop_assert!(high.pairs.len() <= low.pairs.len());
        prop_assert_eq!(&high.pairs[..], &low.pairs[..high.pairs.len()]);
        let (ho, hc) = high.matched_counts();
        let (lo_o, lo_c) = low.matched_counts();
        prop_assert!(ho <= lo_o && hc <= lo_c);
    }

    #[test]
    fn raising_d_never_loses_pairs(seed in any::<u64>(), delta in 0.0..0.6f64, d in 0.1..3.0f64, step in 0.0..3.0f64, ood_sort in any::<bool>()) {
        let sort = if ood_sort { SortMode::OodScore } else { SortMode::DetectorScore };
        let scan = common::rand_scan(&mut ChaCha8Rng::seed_from_u64(seed), 0, 8, 10);
        let near = match_scan(&scan, &cfg(d, delta, sort)).unwrap();
        let far = match_scan(&scan, &cfg(d + step, delta, sort)).unwrap();
        prop_assert!(far.pairs.len() >= near.pairs.len());
    }

    #[test]
    fn matching_is_one_to_one_and_deterministic(seed in any::<u64>(), delta in 0.0..0.6f64, d in 0.1..4.0f64) {
        let scan = common::rand_scan(&mut ChaCha8Rng::seed_from_u64(seed), 0, 8, 10);
        let c = cfg(d, delta, SortMode::OodScore);
        let r = match_scan(&scan, &c).unwrap();
        prop_assert_eq!(&r, &match_scan(&scan, &c).unwrap());
        let mut dets: Vec<usize> = r.pairs.iter().map(|p| p.detection).collect();
        let mut gts: Vec<usize> = r.pairs.iter().map(|p| p.gt).collect();
        dets.sort_unstable();
        dets.dedup();
        gts.sort_unstable();
        gts.dedup();
        prop_assert_eq!(dets.len(), r.pairs.len());
        prop_assert_eq!(gts.len(), r.pairs.len());
        prop_assert_eq!(gts.len() + r.unmatched_gts.len(), scan.ground_truth.len());
        for p in &r.pairs {
            prop_assert!(scan.detections[p.detection].score >= delta);
            prop_assert!(!r.unmatched_detections.contains(&p.detection));
        }
        let a = assign(&scan, &c).unwrap();
        prop_assert_eq!(a.ignored, r.unmatched_detections.clone());
        let n = r.confusion.tp + r.confusion.fp + r.confusion.tn + r.confusion.fn_;
        prop_assert_eq!(n, r.pairs.len());
        prop_assert_eq!(r.scored_samples.len(), r.pairs.len());
    }
}

#[test]
fn hit_rates_fall_with_delta_over_many_scans() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let scans: Vec<_> = (0..300).map(|i| common::rand_scan(&mut rng, i, 6, 8)).collect();
    let mut last = (f64::MAX, f64::MAX);
    for delta in [0.0, 0.05, 0.3, 0.5, 0.8] {
        let reports = match_scans(&scans, &cfg(2.0, delta, SortMode::DetectorScore)).unwrap();
        let h = hit_rates(&reports).unwrap();
        assert!(h.hits_open <= last.0 && h.hits_closed <= last.1);
        last = (h.hits_open, h.hits_closed);
    }
}

#[test]
fn ood_sort_requires_ood_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut scan = common::rand_scan(&mut rng, 0, 3, 0);
    scan.detections.push(common::rand_detection(&mut rng, None));
    scan.detections[0].ood_score = None;
    assert!(match_scan(&scan, &cfg(2.0, 0.0, SortMode::OodScore)).is_err());
}
