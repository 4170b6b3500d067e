use rand::Rng;

use super::{scan_rng, ForgeConfig, ForgeError, ForgeOrigin, ForgedScan};
use crate::geometry::{from_box_frame, to_box_frame};
use crate::model::{ClassLabel, Scan};

/// Draws a factor uniformly from `range` minus the open `excluded` band.
pub fn sample_axis_factor(rng: &mut impl Rng, range: (f64, f64), excluded: (f64, f64)) -> f64 {
    let (lo, hi) = range;
    let bl = excluded.0.clamp(lo, hi);
    let bh = excluded.1.clamp(lo, hi);
    let below = bl - lo;
    let above = hi - bh;
    let u = rng.random::<f64>() * (below + above);
    if u < below {
        lo + u
    } else {
        bh + (u - below)
    }
}

/// Scales one object about its bottom face in its own frame, moving its
/// member points with it. The object stays on the ground.
pub fn resize_object(scan: &mut Scan<f64>, index: usize, factors: [f64; 3]) -> Result<(), ForgeError> {
    let gt = &scan.ground_truth[index];
    let members = gt.point_indices.clone().ok_or(ForgeError::NoMemberPoints(index))?;
    let old = gt.bbox;
    let mut new = old.with_dims(old.l * factors[0], old.w * factors[1], old.h * factors[2])?;
    new.cz = old.z_min() + new.h / 2.0;
    for &i in &members {
        let p = &mut scan.cloud.points[i];
        let [lx, ly, lz] = to_box_frame(&old, p.x, p.y, p.z);
        // height measured from the bottom face so the base stays put
        let from_bottom = (lz + old.h / 2.0) * factors[2];
        let [x, y, z] = from_box_frame(&new, [lx * factors[0], ly * factors[1], from_bottom - new.h / 2.0]);
        p.x = x;
        p.y = y;
        p.z = z;
    }
    scan.ground_truth[index].bbox = new;
    Ok(())
}

/// Rescales a random subset of known objects (each picked with `mix_prob`)
/// by per-axis factors and relabels them as pseudo-unknown.
pub fn forge_resize(scan: &Scan<f64>, config: &ForgeConfig) -> Result<ForgedScan, ForgeError> {
    config.validate()?;
    let mut rng = scan_rng(config.rng_seed, &scan.scan_id);
    let mut out = scan.clone();
    let mut forged = Vec::new();
    for i in 0..scan.ground_truth.len() {
        if !matches!(scan.ground_truth[i].label, ClassLabel::Known(_)) {
            continue;
        }
        if !rng.random_bool(config.mix_prob) {
            continue;
        }
        let factors = [(); 3].map(|_| sample_axis_factor(&mut rng, config.resize_axis_range, config.resize_excluded_band));
        resize_object(&mut out, i, factors)?;
        out.ground_truth[i].label = ClassLabel::Forged;
        forged.push((i, ForgeOrigin::Resized { source: i, factors }));
    }
    Ok(ForgedScan { scan: out, forged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::points_in_box;
    use crate::model::{Box3D, GroundTruthObject, Point, PointCloud};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scan() -> Scan<f64> {
        let b = Box3D::new([2.0, 1.0, 0.75], [4.0, 2.0, 1.5], 0.6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point<f64>> = (0..50)
            .map(|_| {
                let l = [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(-0.75..0.75)];
                let [x, y, z] = from_box_frame(&b, l);
                Point::new(x, y, z, 0.5)
            })
            .collect();
        let mut s = Scan::empty("r");
        s.cloud = PointCloud::new(pts);
        s.ground_truth.push(GroundTruthObject { bbox: b, label: ClassLabel::Known(0), point_indices: Some((0..50).collect()) });
        s
    }

    #[test]
    fn identity_factors_keep_geometry() {
        let mut s = scan();
        let before = s.clone();
        resize_object(&mut s, 0, [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.ground_truth[0].bbox, before.ground_truth[0].bbox);
        for (a, b) in s.cloud.points.iter().zip(&before.cloud.points) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12 && (a.z - b.z).abs() < 1e-12);
        }
    }

    #[test]
    fn doubling_length_keeps_members_inside() {
        let mut s = scan();
        resize_object(&mut s, 0, [2.0, 1.0, 1.0]).unwrap();
        let b = s.ground_truth[0].bbox;
        assert_eq!(b.l, 8.0);
        assert_eq!(points_in_box(&s.cloud, &b).len(), 50);
        assert!((b.z_min() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn missing_members_is_an_error() {
        let mut s = scan();
        s.ground_truth[0].point_indices = None;
        assert!(matches!(resize_object(&mut s, 0, [2.0, 1.0, 1.0]), Err(ForgeError::NoMemberPoints(0))));
    }

    #[test]
    fn factors_avoid_the_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let f = sample_axis_factor(&mut rng, (0.5, 2.0), (0.9, 1.1));
            assert!((0.5..=2.0).contains(&f));
            assert!(!(f > 0.9 && f < 1.1));
        }
    }

    #[test]
    fn seeded_and_relabelled() {
        let s = scan();
        let c = ForgeConfig { mix_prob: 1.0, ..ForgeConfig::default() };
        let a = forge_resize(&s, &c).unwrap();
        assert_eq!(a, forge_resize(&s, &c).unwrap());
        assert_eq!(a.scan.ground_truth[0].label, ClassLabel::Forged);
        assert_eq!(a.forged.len(), 1);
    }
}
