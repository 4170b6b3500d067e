use ood3d::io::{load_dataset, DatasetManifest, RunConfig};
use ood3d::matcher::hit_rates_from_assignments;
use ood3d::model::ClassLabel;
use ood3d::synth::{generate_scans, generate_world, DetectorEmulation, WorldConfig};

#[test]
fn generated_scans_validate_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let world = WorldConfig::compact(15, 3);
    let (path, manifest) = generate_world(&world, &DetectorEmulation::default(), dir.path()).unwrap();
    let loaded = DatasetManifest::load(&path).unwrap();
    assert_eq!(loaded.scan_paths, manifest.scan_paths);
    let scans = load_dataset(&loaded).unwrap();
    let in_memory = generate_scans(&world, &DetectorEmulation::default()).unwrap();
    assert_eq!(scans, in_memory);
    let k = manifest.known_classes.len();
    for s in &scans {
        s.cloud.validate().unwrap();
        for d in &s.detections {
            d.validate(Some(k)).unwrap();
            let argmax = d.logits.iter().enumerate().fold(0, |b, (i, v)| if *v > d.logits[b] { i } else { b });
            assert_eq!(d.predicted_class, argmax);
        }
    }
}

#[test]
fn known_counts_follow_their_priors() {
    let world = WorldConfig { fabricate_maps: false, ground_points: 0, n_scans: 400, ..WorldConfig::default() };
    let scans = generate_scans(&world, &DetectorEmulation::default()).unwrap();
    let n = scans.len() as f64;
    for (k, spec) in world.classes.iter().filter(|c| !c.open).enumerate() {
        let (a, b) = (spec.count_range.0 as f64, spec.count_range.1 as f64);
        // per-scan count is uniform on {a..b}
        let mean = n * (a + b) / 2.0;
        let sd = (n * ((b - a + 1.0).powi(2) - 1.0) / 12.0).sqrt();
        let total = scans.iter().flat_map(|s| &s.ground_truth).filter(|g| g.label == ClassLabel::Known(k)).count() as f64;
        assert!((total - mean).abs() <= 3.0 * sd, "{}: {total} vs {mean} ± {sd}", spec.name);
    }
    let open_scans = scans.iter().filter(|s| s.has_open_objects()).count() as f64;
    let p = world.open_scan_fraction;
    assert!((open_scans - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt());
}

#[test]
fn hit_rates_fall_as_delta_rises() {
    let world = WorldConfig { fabricate_maps: false, ..WorldConfig::default() };
    let scans: Vec<_> = generate_scans(&world, &DetectorEmulation::default()).unwrap().into_iter().filter(|s| s.has_open_objects()).collect();
    let h: Vec<_> = [0.05, 0.3, 0.5]
        .iter()
        .map(|&d| hit_rates_from_assignments(&scans, &RunConfig { delta_thresh: d, ..RunConfig::default() }).unwrap())
        .collect();
    assert!(h[0].hits_open > h[1].hits_open && h[1].hits_open > h[2].hits_open);
    assert!(h[0].hits_closed >= h[1].hits_closed && h[1].hits_closed >= h[2].hits_closed);
}

#[test]
fn perfect_detector_hits_everything() {
    let world = WorldConfig { fabricate_maps: false, ..WorldConfig::compact(20, 4) };
    let scans = generate_scans(&world, &DetectorEmulation::perfect()).unwrap();
    let h = hit_rates_from_assignments(&scans, &RunConfig { delta_thresh: 0.0, ..RunConfig::default() }).unwrap();
    assert_eq!((h.hits_open, h.hits_closed), (1.0, 1.0));
}
