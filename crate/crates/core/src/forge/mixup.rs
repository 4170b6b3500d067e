use rand::seq::index::sample;
use rand::Rng;

use super::assignment::match_points;
use super::{compact_points, scan_rng, ForgeConfig, ForgeError, ForgeOrigin, ForgedScan};
use crate::geometry::{from_box_frame, to_box_frame};
use crate::model::{ClassLabel, Point, Scan};

/// Uniformly subsamples `pts` down to `n` points, keeping their order.
fn subsample<P: Copy>(pts: &[P], n: usize, rng: &mut impl Rng) -> Vec<P> {
    if pts.len() <= n {
        return pts.to_vec();
    }
    let mut idx = sample(rng, pts.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pts[i]).collect()
}

/// Interpolates two local-frame point sets: both are brought to the smaller
/// cardinality, matched by minimum total squared distance, and each pair is
/// blended as `(1 − λ)·a + λ·b`. The fourth coordinate (intensity) is blended
/// along with the position but plays no part in the matching.
pub fn mix_point_sets(a: &[[f64; 4]], b: &[[f64; 4]], lambda: f64, rng: &mut impl Rng) -> Vec<[f64; 4]> {
    let n = a.len().min(b.len());
    let a = subsample(a, n, rng);
    let b = subsample(b, n, rng);
    let xyz = |p: &[f64; 4]| [p[0], p[1], p[2]];
    let pa: Vec<[f64; 3]> = a.iter().map(xyz).collect();
    let pb: Vec<[f64; 3]> = b.iter().map(xyz).collect();
    let perm = match_points(&pa, &pb);
    a.iter()
        .zip(&perm)
        .map(|(p, &j)| {
            let q = b[j];
            [0, 1, 2, 3].map(|k| (1.0 - lambda) * p[k] + lambda * q[k])
        })
        .collect()
}

/// PointMixup with the interpolation factor drawn from `mix_range`.
pub fn forge_pointmixup(scan: &Scan<f64>, config: &ForgeConfig) -> Result<ForgedScan, ForgeError> {
    forge_pointmixup_with(scan, config, None)
}

/// PointMixup; `lambda` forces the interpolation factor for every mix.
///
/// Each eligible known object (at least `min_points` members) is, with
/// probability `mix_prob`, replaced by its blend with another eligible object
/// drawn uniformly. The blend keeps the first object's pose, takes the
/// interpolated dimensions and sits on the same ground height.
pub fn forge_pointmixup_with(scan: &Scan<f64>, config: &ForgeConfig, lambda: Option<f64>) -> Result<ForgedScan, ForgeError> {
    config.validate()?;
    let eligible: Vec<usize> = scan
        .ground_truth
        .iter()
        .enumerate()
        .filter(|(_, g)| {
            matches!(g.label, ClassLabel::Known(_)) && g.point_indices.as_ref().is_some_and(|p| p.len() >= config.min_points)
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < 2 {
        return Err(ForgeError::TooFewEligible { min: config.min_points, found: eligible.len() });
    }
    let mut rng = scan_rng(config.rng_seed, &scan.scan_id);
    // local point sets read from the untouched scan so partners are never already mixed
    let local = |i: usize| -> Vec<[f64; 4]> {
        let g = &scan.ground_truth[i];
        g.point_indices
            .as_deref()
            .unwrap_or_default()
            .iter()
            .map(|&k| {
                let p = scan.cloud.points[k];
                let [x, y, z] = to_box_frame(&g.bbox, p.x, p.y, p.z);
                [x, y, z, p.intensity]
            })
            .collect()
    };

    let mut out = scan.clone();
    let mut drop = vec![false; scan.cloud.len()];
    let mut forged = Vec::new();
    for (pos, &i) in eligible.iter().enumerate() {
        if !rng.random_bool(config.mix_prob) {
            continue;
        }
        let mut j = rng.random_range(0..eligible.len() - 1);
        if j >= pos {
            j += 1;
        }
        let partner = eligible[j];
        let lam = lambda.unwrap_or_else(|| rng.random_range(config.mix_range.0..=config.mix_range.1));
        let mixed = mix_point_sets(&local(i), &local(partner), lam, &mut rng);

        let a = scan.ground_truth[i].bbox;
        let b = scan.ground_truth[partner].bbox;
        let mut bbox = a.with_dims((1.0 - lam) * a.l + lam * b.l, (1.0 - lam) * a.w + lam * b.w, (1.0 - lam) * a.h + lam * b.h)?;
        bbox.cz = a.z_min() + bbox.h / 2.0;

        let members = scan.ground_truth[i].point_indices.clone().unwrap_or_default();
        for (slot, m) in members.iter().zip(&mixed) {
            // blended center-relative coords already fit the blended dims
            let [x, y, z] = from_box_frame(&bbox, [m[0], m[1], m[2]]);
            out.cloud.points[*slot] = Point::new(x, y, z, m[3].max(0.0));
        }
        for &slot in &members[mixed.len()..] {
            drop[slot] = true;
        }
        let g = &mut out.ground_truth[i];
        g.bbox = bbox;
        g.label = ClassLabel::Forged;
        g.point_indices = Some(members[..mixed.len()].to_vec());
        forged.push((i, ForgeOrigin::Mixed { a: i, b: partner, lambda: lam }));
    }
    compact_points(&mut out, &drop);
    Ok(ForgedScan { scan: out, forged })
}
