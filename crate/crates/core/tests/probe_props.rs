use ood3d::probe::{max_pool3x3, pooled_radius, probe, FeatureMap, MapSource, ProbeConfig};
use ood3d::synth::WorldConfig;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_map(seed: u64) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c, d) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..4));
    let origin = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
    let cell = rng.random_range(0.3..3.0);
    FeatureMap::new(r, c, d, origin, cell, (0..r * c * d).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap()
}

const BILINEAR: ProbeConfig = ProbeConfig { source: MapSource::LowDim, interpolate: true, pool3x3: false };
const NEAREST: ProbeConfig = ProbeConfig { source: MapSource::LowDim, interpolate: false, pool3x3: false };

proptest! {
    #[test]
    fn interpolation_at_cell_centres_is_a_lookup(seed in any::<u64>()) {
        let m = random_map(seed);
        for r in 0..m.rows {
            for c in 0..m.cols {
                let at = m.cell_center(r, c);
                let a = probe(&m, at, &BILINEAR).unwrap();
                let b = probe(&m, at, &NEAREST).unwrap();
                for ((x, y), z) in a.iter().zip(&b).zip(m.cell(r, c)) {
                    prop_assert!((x - y).abs() <= 1e-9 && (y - z).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooled_map_dominates_input(seed in any::<u64>()) {
        let m = random_map(seed);
        let p = max_pool3x3(&m);
        prop_assert!(p.data.iter().zip(&m.data).all(|(a, b)| a >= b));
    }

    #[test]
    fn bilinear_probe_is_lipschitz(seed in any::<u64>(), u in 0.0..1.0f64, v in 0.0..1.0f64, du in -1.0..1.0f64, dv in -1.0..1.0f64) {
        let m = random_map(seed);
        let eps = 1e-3;
        let [x0, y0] = m.cell_center(0, 0);
        let span = [(m.rows - 1) as f64 * m.cell_size, (m.cols - 1) as f64 * m.cell_size];
        // axis order does not matter for a symmetric bound
        let p = [x0 + u * span[0].max(span[1]), y0 + v * span[0].max(span[1])];
        let q = [p[0] + eps * du, p[1] + eps * dv];
        let (Ok(a), Ok(b)) = (probe(&m, p, &BILINEAR), probe(&m, q, &BILINEAR)) else { return Ok(()); };
        let range = m.data.iter().cloned().fold(f64::MIN, f64::max) - m.data.iter().cloned().fold(f64::MAX, f64::min);
        let step = (du * du + dv * dv).sqrt() * eps / m.cell_size;
        for (x, y) in a.iter().zip(&b) {
            // each axis contributes at most range × (shift in cells)
            prop_assert!((x - y).abs() <= 2.0 * range * step + 1e-9);
        }
    }
}

#[test]
fn aggregation_radius_of_default_world() {
    let world = WorldConfig::default();
    assert_eq!(world.cell_size, 1.4);
    assert!((pooled_radius(world.cell_size) - 2.1).abs() < 1e-12);
    // three cells span twice the radius
    assert!((3.0 * world.cell_size - 2.0 * 2.1f64).abs() < 1e-12);
}

#[test]
fn far_queries_are_out_of_bounds() {
    let m = FeatureMap::new(2, 2, 1, [0.0, 0.0], 1.0, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    assert!(probe(&m, [50.0, 0.0], &BILINEAR).is_err());
}
