//! Pseudo-unknown generators for training the two-stage head.
//!
//! Two families: [`forge_gaussian`] and [`forge_topk`] emit head inputs
//! directly, while [`forge_resize`], [`forge_pointmixup`] and [`forge_inject`]
//! rewrite a scan and report which ground-truth objects they fabricated.

pub mod assignment;
mod gaussian;
mod inject;
pub mod mesh;
mod mixup;
mod resize;
mod topk;

use std::io::{BufRead, Write as _};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::head::HeadError;
use crate::io::ScanIoError;
use crate::matcher::MatchError;
use crate::model::{ModelError, Scan};
use crate::probe::ProbeError;

pub use gaussian::forge_gaussian;
pub use inject::{forge_inject, place_mesh};
pub use mesh::{MeshBank, MeshError, TriMesh};
pub use mixup::{forge_pointmixup, forge_pointmixup_with, mix_point_sets};
pub use resize::{forge_resize, resize_object, sample_axis_factor};
pub use topk::{forge_topk, topk_labels, topk_select};

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("ground-truth object {0} has no member points")]
    NoMemberPoints(usize),
    #[error("need at least 2 objects with {min} or more points, found {found}")]
    TooFewEligible { min: usize, found: usize },
    #[error("no collision-free pose after {0} attempts")]
    NoFreeSpace(usize),
    #[error("mesh bank is empty")]
    EmptyMeshBank,
    #[error("invalid forge config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Io(#[from] ScanIoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ForgeMethod {
    GaussianNoise,
    MeshInjection,
    PointMixup,
    Resizing,
    TopK,
}

impl ForgeMethod {
    pub const ALL: [ForgeMethod; 5] = [
        ForgeMethod::GaussianNoise,
        ForgeMethod::MeshInjection,
        ForgeMethod::PointMixup,
        ForgeMethod::Resizing,
        ForgeMethod::TopK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ForgeMethod::GaussianNoise => "gaussian",
            ForgeMethod::MeshInjection => "mesh",
            ForgeMethod::PointMixup => "pointmixup",
            ForgeMethod::Resizing => "resize",
            ForgeMethod::TopK => "topk",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let s = s.to_ascii_lowercase().replace(['_', '-'], "");
        match s.as_str() {
            "gaussiannoise" | "noise" => Some(ForgeMethod::GaussianNoise),
            "meshinjection" | "inject" => Some(ForgeMethod::MeshInjection),
            "mixup" => Some(ForgeMethod::PointMixup),
            "resizing" => Some(ForgeMethod::Resizing),
            _ => Self::ALL.into_iter().find(|m| m.name() == s),
        }
    }

    /// TopK learns from real unknowns in their scans; every other method
    /// trains only on scans free of open-class objects.
    pub fn retains_open_scans(self) -> bool {
        self == ForgeMethod::TopK
    }

    /// Whether the method rewrites scans rather than emitting inputs.
    pub fn edits_scans(self) -> bool {
        matches!(self, ForgeMethod::MeshInjection | ForgeMethod::PointMixup | ForgeMethod::Resizing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForgeConfig {
    pub method: ForgeMethod,
    pub rng_seed: u64,
    pub topk_k: usize,
    /// Per-object probability of being forged (PointMixup and Resizing).
    pub mix_prob: f64,
    pub mix_range: (f64, f64),
    pub min_points: usize,
    pub inject_count_range: (usize, usize),
    pub surface_samples: usize,
    pub grid_cells_range: (usize, usize),
    pub keep_per_cell_range: (usize, usize),
    pub scale_range: (f64, f64),
    pub resize_axis_range: (f64, f64),
    /// Factors inside this open band are never drawn.
    pub resize_excluded_band: (f64, f64),
    pub max_placement_attempts: usize,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            method: ForgeMethod::TopK,
            rng_seed: 0,
            topk_k: 5,
            mix_prob: 0.2,
            mix_range: (0.3, 0.7),
            min_points: 5,
            inject_count_range: (15, 25),
            surface_samples: 200,
            grid_cells_range: (5, 10),
            keep_per_cell_range: (1, 3),
            scale_range: (1.0, 4.0),
            resize_axis_range: (0.5, 2.0),
            resize_excluded_band: (0.9, 1.1),
            max_placement_attempts: 100,
        }
    }
}

impl ForgeConfig {
    pub fn new(method: ForgeMethod, rng_seed: u64) -> Self {
        Self { method, rng_seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |m: &str| Err(ForgeError::Config(m.to_string()));
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(0.0..=1.0).contains(&self.mix_prob) {
            return bad("mix_prob must lie in [0, 1]");
        }
        if !ordered(self.mix_range) || self.mix_range.0 < 0.0 || self.mix_range.1 > 1.0 {
            return bad("mix_range must be an ordered sub-range of [0, 1]");
        }
        if self.inject_count_range.0 > self.inject_count_range.1 {
            return bad("inject_count_range must be ordered");
        }
        if self.grid_cells_range.0 == 0 || self.grid_cells_range.0 > self.grid_cells_range.1 {
            return bad("grid_cells_range must be ordered and positive");
        }
        if self.keep_per_cell_range.0 == 0 || self.keep_per_cell_range.0 > self.keep_per_cell_range.1 {
            return bad("keep_per_cell_range must be ordered and positive");
        }
        if !ordered(self.scale_range) || self.scale_range.0 <= 0.0 {
            return bad("scale_range must be ordered and positive");
        }
        let (lo, hi) = self.resize_axis_range;
        let (bl, bh) = self.resize_excluded_band;
        if !ordered(self.resize_axis_range) || lo <= 0.0 || !ordered(self.resize_excluded_band) {
            return bad("resize ranges must be ordered and positive");
        }
        if bl <= lo && bh >= hi {
            return bad("resize_excluded_band covers the whole resize range");
        }
        if self.surface_samples == 0 || self.max_placement_attempts == 0 {
            return bad("surface_samples and max_placement_attempts must be positive");
        }
        Ok(())
    }
}

/// How a fabricated ground-truth object came to be. Indices refer to the
/// ground truth of the scan before forging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ForgeOrigin {
    Resized { source: usize, factors: [f64; 3] },
    Mixed { a: usize, b: usize, lambda: f64 },
    Injected { mesh: String, scale: f64 },
}

/// A rewritten scan plus the ground-truth indices that are now pseudo-unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct ForgedScan {
    pub scan: Scan<f64>,
    pub forged: Vec<(usize, ForgeOrigin)>,
}

/// 64-bit FNV-1a, stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Per-scan seed: `seed ⊕ hash(scan_id)`.
pub fn scan_seed(seed: u64, scan_id: &str) -> u64 {
    seed ^ fnv1a(scan_id.as_bytes())
}

pub(crate) fn scan_rng(seed: u64, scan_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(scan_seed(seed, scan_id))
}

/// Drops flagged points and renumbers every object's member indices.
pub(crate) fn compact_points(scan: &mut Scan<f64>, drop: &[bool]) {
    debug_assert_eq!(drop.len(), scan.cloud.len());
    let mut remap = vec![usize::MAX; drop.len()];
    let mut next = 0;
    for (i, &d) in drop.iter().enumerate() {
        if !d {
            remap[i] = next;
            next += 1;
        }
    }
    let mut i = 0;
    scan.cloud.points.retain(|_| {
        i += 1;
        !drop[i - 1]
    });
    for g in &mut scan.ground_truth {
        if let Some(idx) = &mut g.point_indices {
            idx.retain(|&j| !drop[j]);
            for j in idx.iter_mut() {
                *j = remap[*j];
            }
        }
    }
}

/// One line of a training-record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub x: Vec<f64>,
    pub y: u8,
    pub provenance: String,
}

pub fn write_records(path: &Path, records: &[TrainingRecord]) -> Result<(), ScanIoError> {
    let file = std::fs::File::create(path).map_err(|e| ScanIoError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| ScanIoError::schema(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| ScanIoError::io(path, e))?;
    }
    w.flush().map_err(|e| ScanIoError::io(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<TrainingRecord>, ScanIoError> {
    let file = std::fs::File::open(path).map_err(|e| ScanIoError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ScanIoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrainingRecord = serde_json::from_str(&line)
            .map_err(|e| ScanIoError::Parse { path: path.to_path_buf(), line: n + 1, msg: e.to_string() })?;
        if r.y > 1 {
            return Err(ScanIoError::Parse { path: path.to_path_buf(), line: n + 1, msg: "label must be 0 or 1".into() });
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Box3D, ClassLabel, GroundTruthObject, Point, PointCloud};

    #[test]
    fn defaults_validate() {
        ForgeConfig::default().validate().unwrap();
        let bad = ForgeConfig { mix_range: (0.7, 0.3), ..ForgeConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ForgeConfig { mix_prob: 1.5, ..ForgeConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in ForgeMethod::ALL {
            assert_eq!(ForgeMethod::parse(m.name()), Some(m));
        }
        assert_eq!(ForgeMethod::parse("Top-K"), Some(ForgeMethod::TopK));
        assert!(ForgeMethod::TopK.retains_open_scans());
        assert!(!ForgeMethod::GaussianNoise.retains_open_scans());
    }

    #[test]
    fn seeds_depend_on_scan_id() {
        assert_ne!(scan_seed(1, "a"), scan_seed(1, "b"));
        assert_eq!(scan_seed(1, "a"), scan_seed(1, "a"));
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
    }

    #[test]
    fn compaction_renumbers_members() {
        let mut scan = Scan::<f64>::empty("s");
        scan.cloud = PointCloud::new((0..5).map(|i| Point::new(i as f64, 0.0, 0.0, 0.0)).collect());
        let b = Box3D::new([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], 0.0).unwrap();
        scan.ground_truth.push(GroundTruthObject { bbox: b, label: ClassLabel::Known(0), point_indices: Some(vec![1, 3, 4]) });
        compact_points(&mut scan, &[true, false, false, true, false]);
        assert_eq!(scan.cloud.len(), 3);
        assert_eq!(scan.ground_truth[0].point_indices, Some(vec![0, 2]));
        assert_eq!(scan.cloud.points[2].x, 4.0);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        let recs = vec![
            TrainingRecord { x: vec![0.1, -2.5], y: 0, provenance: "s0/det3".into() },
            TrainingRecord { x: vec![1e-17, 3.0], y: 1, provenance: "s1/det0".into() },
        ];
        write_records(&p, &recs).unwrap();
        assert_eq!(read_records(&p).unwrap(), recs);
    }
}
