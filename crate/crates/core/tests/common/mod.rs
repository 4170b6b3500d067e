#![allow(dead_code)]

use ood3d::model::{Box3D, ClassLabel, Detection, GroundTruthObject, Scan};
use proptest::prelude::*;
use rand::Rng;

pub fn rand_box(rng: &mut impl Rng, span: f64) -> Box3D<f64> {
    let dims = [rng.random_range(0.5..5.0), rng.random_range(0.5..2.5), rng.random_range(0.5..2.0)];
    let center = [rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(0.0..1.5)];
    Box3D::new(center, dims, rng.random_range(-3.0..3.0)).unwrap()
}

/// Detection near `g` (or anywhere) with scores on a coarse grid to force ties.
pub fn rand_detection(rng: &mut impl Rng, near: Option<&Box3D<f64>>) -> Detection<f64> {
    let bbox = match near {
        Some(g) => Box3D::new([g.cx + rng.random_range(-2.5..2.5), g.cy + rng.random_range(-2.5..2.5), g.cz], [g.l, g.w, g.h], g.yaw).unwrap(),
        None => rand_box(rng, 10.0),
    };
    let mut d = Detection::new(bbox, f64::from(rng.random_range(0..=20)) / 20.0, vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], vec![]).unwrap();
    d.ood_score = Some(f64::from(rng.random_range(0..=10)) / 10.0);
    d
}

pub fn rand_scan(rng: &mut impl Rng, id: usize, max_gt: usize, max_det: usize) -> Scan<f64> {
    let mut s = Scan::empty(format!("s{id}"));
    for _ in 0..rng.random_range(0..=max_gt) {
        let label = if rng.random_bool(0.4) { ClassLabel::Open(0) } else { ClassLabel::Known(rng.random_range(0..2)) };
        s.ground_truth.push(GroundTruthObject { bbox: rand_box(rng, 10.0), label, point_indices: None });
    }
    for _ in 0..rng.random_range(0..=max_det) {
        let near = (!s.ground_truth.is_empty() && rng.random_bool(0.7)).then(|| s.ground_truth[rng.random_range(0..s.ground_truth.len())].bbox);
        let d = rand_detection(rng, near.as_ref());
        s.detections.push(d);
    }
    s
}

pub fn arb_box() -> impl Strategy<Value = Box3D<f64>> {
    (-20.0..20.0f64, -20.0..20.0f64, -2.0..2.0f64, 0.2..6.0f64, 0.2..6.0f64, 0.2..3.0f64, -3.1..3.1f64)
        .prop_map(|(x, y, z, l, w, h, yaw)| Box3D::new([x, y, z], [l, w, h], yaw).unwrap())
}
