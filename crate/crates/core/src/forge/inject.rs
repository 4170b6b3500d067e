use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mesh::{grid_sample, MeshBank};
use super::{scan_rng, ForgeConfig, ForgeError, ForgeOrigin, ForgedScan};
use crate::geometry::{box_overlap_3d, from_box_frame};
use crate::io::DatasetManifest;
use crate::model::{Box3D, ClassLabel, GroundTruthObject, Point, Scan};

/// Ground-plane bounds `([x_min, y_min], [x_max, y_max])` of a scan: the
/// feature-map extent when a map is present, otherwise the cloud's footprint.
fn scan_bounds(scan: &Scan<f64>) -> Option<([f64; 2], [f64; 2])> {
    if let Some(m) = scan.feature_map_low.as_ref().or(scan.feature_map_high.as_ref()) {
        let [w, h] = m.extent();
        let lo = [m.origin[0] - m.cell_size / 2.0, m.origin[1] - m.cell_size / 2.0];
        return Some((lo, [lo[0] + w, lo[1] + h]));
    }
    let pts = &scan.cloud.points;
    if pts.is_empty() {
        return None;
    }
    let lo = [pts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), pts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min)];
    let hi = [pts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max), pts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max)];
    Some((lo, hi))
}

/// Finds a ground pose for a box of `dims` inside `bounds` that overlaps none
/// of `occupied`. The box bottom sits at `z = 0`.
pub fn place_mesh(
    dims: [f64; 3],
    bounds: ([f64; 2], [f64; 2]),
    occupied: &[Box3D<f64>],
    attempts: usize,
    rng: &mut impl Rng,
) -> Result<Box3D<f64>, ForgeError> {
    let r = dims[0].hypot(dims[1]) / 2.0;
    let (lo, hi) = bounds;
    if hi[0] - lo[0] < 2.0 * r || hi[1] - lo[1] < 2.0 * r {
        return Err(ForgeError::NoFreeSpace(0));
    }
    for _ in 0..attempts {
        let x = rng.random_range(lo[0] + r..=hi[0] - r);
        let y = rng.random_range(lo[1] + r..=hi[1] - r);
        let yaw = rng.random_range(-PI..PI);
        let b = Box3D::new([x, y, dims[2] / 2.0], dims, yaw)?;
        if occupied.iter().all(|o| box_overlap_3d(o, &b) == 0.0) {
            return Ok(b);
        }
    }
    Err(ForgeError::NoFreeSpace(attempts))
}

/// Inserts `N ~ U(inject_count_range)` mesh objects as pseudo-unknown ground truth.
///
/// Each mesh is normalized to unit extent, surface-sampled, thinned on a
/// `g³` grid keeping up to `k` points per cell, scaled by `s` and dropped at
/// a collision-free ground pose.
pub fn forge_inject(scan: &Scan<f64>, bank: &MeshBank, manifest: &DatasetManifest, config: &ForgeConfig) -> Result<ForgedScan, ForgeError> {
    config.validate()?;
    if bank.is_empty() {
        return Err(ForgeError::EmptyMeshBank);
    }
    let normalized: Vec<_> = bank.meshes.iter().map(|(n, m)| Ok((n.as_str(), m.normalized()?))).collect::<Result<_, ForgeError>>()?;
    let bounds = scan_bounds(scan).ok_or(ForgeError::NoFreeSpace(0))?;
    let (mu, sigma) = manifest.intensity_stats;
    let intensity = Normal::new(mu, sigma.max(0.0)).map_err(|e| ForgeError::Config(e.to_string()))?;
    let mut rng = scan_rng(config.rng_seed, &scan.scan_id);

    let mut out = scan.clone();
    let mut occupied: Vec<Box3D<f64>> = scan.ground_truth.iter().map(|g| g.bbox).collect();
    let mut forged = Vec::new();
    let count = rng.random_range(config.inject_count_range.0..=config.inject_count_range.1);
    for _ in 0..count {
        let (name, mesh) = &normalized[rng.random_range(0..normalized.len())];
        let cells = rng.random_range(config.grid_cells_range.0..=config.grid_cells_range.1);
        let keep = rng.random_range(config.keep_per_cell_range.0..=config.keep_per_cell_range.1);
        let scale = rng.random_range(config.scale_range.0..=config.scale_range.1);
        let samples = mesh.sample_surface(config.surface_samples, &mut rng)?;
        let local = grid_sample(&samples, cells, keep);

        let (lo, hi) = mesh.bounds();
        // a hair of padding keeps surface points inside after the pose round trip
        let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) * scale).max(1e-2) * (1.0 + 1e-9));
        let bbox = place_mesh(dims, bounds, &occupied, config.max_placement_attempts, &mut rng)?;

        let start = out.cloud.len();
        for p in &local {
            let [x, y, z] = from_box_frame(&bbox, p.map(|v| v * scale));
            out.cloud.points.push(Point::new(x, y, z, intensity.sample(&mut rng).max(0.0)));
        }
        occupied.push(bbox);
        out.ground_truth.push(GroundTruthObject {
            bbox,
            label: ClassLabel::Forged,
            point_indices: Some((start..out.cloud.len()).collect()),
        });
        forged.push((out.ground_truth.len() - 1, ForgeOrigin::Injected { mesh: name.to_string(), scale }));
    }
    Ok(ForgedScan { scan: out, forged })
}
