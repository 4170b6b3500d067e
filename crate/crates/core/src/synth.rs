//! Procedural scenes and an emulated detector.
//!
//! Every scan is a square patch of flat ground holding non-overlapping boxes
//! of known and open classes, filled with uniform LiDAR-like points. Feature
//! maps are fabricated analytically: each object carries an instance
//! embedding drawn around its class mean, and each map cell holds the
//! distance-weighted blend of nearby instance embeddings plus noise. Open
//! class means sit `open_shift` noise-sigmas away from the known-class
//! centroid, orthogonal to the span of the known means, which makes the
//! separability of known and open objects a single tunable knob.
//!
//! Scans are generated independently from per-scan seeds, so the output does
//! not depend on thread count.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{fnv1a, scan_seed, ForgeOrigin, ForgedScan};
use crate::geometry::{bev_distance, from_box_frame};
use crate::io::{save_scan, DatasetManifest, RunConfig, SaveOptions, ScanIoError, Storage};
use crate::matcher::assign;
use crate::model::{Box3D, ClassLabel, ClassPartition, Detection, GroundTruthObject, ModelError, Point, PointCloud, Scan};
use crate::probe::FeatureMap;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] ScanIoError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One object class of the synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub open: bool,
    /// Mean `(l, w, h)` in meters.
    pub size_mean: [f64; 3],
    pub size_std: [f64; 3],
    /// Inclusive per-scan count range; open classes only appear in open scans.
    pub count_range: (usize, usize),
    /// Inclusive range of member points per object.
    pub points_range: (usize, usize),
}

impl ClassSpec {
    fn new(name: &str, open: bool, size_mean: [f64; 3], size_std: [f64; 3], count_range: (usize, usize), points_range: (usize, usize)) -> Self {
        Self { name: name.into(), open, size_mean, size_std, count_range, points_range }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub name: String,
    pub n_scans: usize,
    pub open_scan_fraction: f64,
    pub classes: Vec<ClassSpec>,
    /// Side of the square scan area, meters, centered at the origin.
    pub extent: f64,
    pub cell_size: f64,
    pub feature_dim_low: usize,
    pub feature_dim_high: usize,
    /// Write feature maps; without them the head falls back to detection embeddings.
    pub fabricate_maps: bool,
    pub ground_points: usize,
    /// `(mean, std)` of point intensity.
    pub intensity_stats: (f64, f64),
    pub rng_seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            n_scans: 200,
            open_scan_fraction: 0.75,
            classes: vec![
                ClassSpec::new("car", false, [4.5, 1.9, 1.6], [0.4, 0.15, 0.15], (2, 7), (60, 250)),
                ClassSpec::new("pedestrian", false, [0.7, 0.7, 1.75], [0.1, 0.1, 0.1], (2, 6), (15, 60)),
                ClassSpec::new("cyclist", false, [1.8, 0.7, 1.7], [0.2, 0.1, 0.1], (1, 4), (20, 80)),
                ClassSpec::new("stroller", true, [0.9, 0.6, 1.1], [0.15, 0.1, 0.1], (1, 3), (10, 50)),
            ],
            extent: 100.0,
            cell_size: 1.4,
            feature_dim_low: 192,
            feature_dim_high: 512,
            fabricate_maps: true,
            ground_points: 1500,
            intensity_stats: (0.35, 0.15),
            rng_seed: 0,
        }
    }
}

impl WorldConfig {
    /// A small world for fast experiments: 50 m scans and narrow feature maps.
    pub fn compact(n_scans: usize, rng_seed: u64) -> Self {
        Self {
            n_scans,
            extent: 50.0,
            feature_dim_low: 24,
            feature_dim_high: 64,
            ground_points: 300,
            rng_seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return bad("extent must be positive");
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return bad("cell_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.open_scan_fraction) {
            return bad("open_scan_fraction must lie in [0, 1]");
        }
        if self.feature_dim_low == 0 || self.feature_dim_high == 0 {
            return bad("feature dims must be positive");
        }
        let known = self.classes.iter().filter(|c| !c.open).count();
        if known == 0 || self.classes.iter().all(|c| !c.open) {
            return bad("need at least one known and one open class");
        }
        if self.feature_dim_low <= known + self.classes.len() {
            return bad("feature dims must exceed the number of classes");
        }
        for c in &self.classes {
            if c.size_mean.iter().any(|&v| !(v > 0.0)) || c.size_std.iter().any(|&v| !(v >= 0.0)) {
                return bad("size priors must be positive");
            }
            if c.count_range.0 > c.count_range.1 || c.points_range.0 > c.points_range.1 || c.points_range.1 == 0 {
                return bad("count and point ranges must be ordered");
            }
        }
        let (_, s) = self.intensity_stats;
        if !(s > 0.0) {
            return bad("intensity std must be positive");
        }
        self.partition().validate().map_err(|e| SynthError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn partition(&self) -> ClassPartition {
        let names = |open: bool| self.classes.iter().filter(|c| c.open == open).map(|c| c.name.clone()).collect();
        ClassPartition { known: names(false), open: names(true) }
    }

    fn known_specs(&self) -> Vec<&ClassSpec> {
        self.classes.iter().filter(|c| !c.open).collect()
    }

    fn open_specs(&self) -> Vec<&ClassSpec> {
        self.classes.iter().filter(|c| c.open).collect()
    }

    pub fn grid_cells(&self) -> usize {
        (self.extent / self.cell_size).ceil() as usize
    }

    fn half(&self) -> f64 {
        self.extent / 2.0
    }
}

/// Beta prior on detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePrior {
    pub alpha: f64,
    pub beta: f64,
}

/// Class-conditional logit means, all shifted by `confidence_slope · logit(score)`.
///
/// Known objects peak on their own class. Open objects peak lower on a random
/// known class, with every other class lifted to `open_floor`; clutter peaks
/// on a random class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitModel {
    pub known_peak: f64,
    pub open_peak: f64,
    pub open_floor: f64,
    pub clutter_peak: f64,
    pub confidence_slope: f64,
    pub noise_std: f64,
    /// Monte-Carlo samples per detection; 0 disables them.
    pub mc_samples: usize,
    pub mc_noise_known: f64,
    pub mc_noise_open: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    /// Per-coordinate std of the known class means.
    pub class_spread: f64,
    /// Per-coordinate std of instance embeddings around their class mean.
    pub noise_std: f64,
    /// Distance of open means from the known centroid, in units of `noise_std`.
    pub open_shift: f64,
    /// Weight of the log-size term.
    pub geometry_weight: f64,
    pub map_noise_std: f64,
    pub detection_noise_std: f64,
    /// Pseudo-weight of the empty background in each cell's blend.
    pub background_weight: f64,
    /// Seeds the class means; shared by every world using this emulation.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorEmulation {
    pub miss_rate_known: f64,
    pub miss_rate_open: f64,
    pub center_jitter_std: f64,
    /// Relative std of the predicted dimensions.
    pub size_jitter_std: f64,
    pub yaw_jitter_std: f64,
    pub score_known: ScorePrior,
    pub score_open: ScorePrior,
    pub score_clutter: ScorePrior,
    pub logit_model: LogitModel,
    pub embedding_model: EmbeddingModel,
    /// Mean false detections per scan.
    pub clutter_rate: f64,
    /// Clutter keeps at least this ground distance from every object, meters.
    pub clutter_clearance: f64,
}

impl Default for DetectorEmulation {
    fn default() -> Self {
        Self {
            miss_rate_known: 0.1,
            miss_rate_open: 0.3,
            center_jitter_std: 0.25,
            size_jitter_std: 0.05,
            yaw_jitter_std: 0.05,
            score_known: ScorePrior { alpha: 5.0, beta: 2.0 },
            score_open: ScorePrior { alpha: 2.2, beta: 3.0 },
            score_clutter: ScorePrior { alpha: 1.2, beta: 6.0 },
            logit_model: LogitModel {
                known_peak: 2.0,
                open_peak: 1.5,
                open_floor: 1.0,
                clutter_peak: 1.0,
                confidence_slope: 1.0,
                noise_std: 1.0,
                mc_samples: 8,
                mc_noise_known: 0.4,
                mc_noise_open: 0.6,
            },
            embedding_model: EmbeddingModel {
                class_spread: 1.0,
                noise_std: 0.5,
                open_shift: 3.0,
                geometry_weight: 0.5,
                map_noise_std: 0.1,
                detection_noise_std: 0.1,
                background_weight: 0.05,
                seed: 7,
            },
            clutter_rate: 3.0,
            clutter_clearance: 5.0,
        }
    }
}

impl DetectorEmulation {
    /// Hits everything exactly: no misses, jitter or clutter.
    pub fn perfect() -> Self {
        Self {
            miss_rate_known: 0.0,
            miss_rate_open: 0.0,
            center_jitter_std: 0.0,
            size_jitter_std: 0.0,
            yaw_jitter_std: 0.0,
            clutter_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        let rate = |v: f64| (0.0..=1.0).contains(&v);
        if !rate(self.miss_rate_known) || !rate(self.miss_rate_open) {
            return bad("miss rates must lie in [0, 1]");
        }
        let l = &self.logit_model;
        let e = &self.embedding_model;
        let stds = [
            self.center_jitter_std,
            self.size_jitter_std,
            self.yaw_jitter_std,
            l.noise_std,
            l.mc_noise_known,
            l.mc_noise_open,
            e.class_spread,
            e.noise_std,
            e.map_noise_std,
            e.detection_noise_std,
            e.background_weight,
            self.clutter_rate,
            self.clutter_clearance,
        ];
        if stds.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("standard deviations and rates must be finite and non-negative");
        }
        for p in [self.score_known, self.score_open, self.score_clutter] {
            if !(p.alpha > 0.0 && p.beta > 0.0) {
                return bad("score priors need positive parameters");
            }
        }
        if l.mc_samples == 1 {
            return bad("mc_samples must be 0 or at least 2");
        }
        Ok(())
    }
}

/// World plus emulation, as stored in the `world.json` echo file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SynthConfig {
    pub world: WorldConfig,
    pub emulation: DetectorEmulation,
}

pub const WORLD_ECHO_FILE: &str = "world.json";

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.world.validate()?;
        self.emulation.validate()
    }

    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanIoError::Io { path: path.to_path_buf(), source: e })?;
        let cfg: SynthConfig = serde_json::from_str(&text).map_err(|e| SynthError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthError> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text + "\n").map_err(|e| ScanIoError::Io { path: path.to_path_buf(), source: e })?;
        Ok(())
    }
}

fn round_f32(v: f64) -> f64 {
    f64::from(v as f32)
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn beta(rng: &mut impl Rng, p: ScorePrior) -> f64 {
    let s = Beta::new(p.alpha, p.beta).expect("validated prior").sample(rng);
    s.clamp(1e-4, 1.0 - 1e-4)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// What an object is, as far as the emulator is concerned.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectKind {
    Known(usize),
    Open(usize),
    Resized { class: usize },
    Mixed { a: usize, b: usize, lambda: f64 },
    Injected { mesh: String },
}

impl ObjectKind {
    fn looks_known(&self) -> bool {
        matches!(self, ObjectKind::Known(_) | ObjectKind::Resized { .. })
    }
}

/// Class means at one embedding dimensionality.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    pub dim: usize,
    pub known_means: Vec<Vec<f64>>,
    pub open_means: Vec<Vec<f64>>,
    /// `dim × 3` directions of the log-size term, column-major.
    pub geometry: [Vec<f64>; 3],
    /// Unit directions along which open means were shifted.
    pub open_directions: Vec<Vec<f64>>,
    model: EmbeddingModel,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Gram–Schmidt: removes from `v` its components along the orthonormal `basis`.
fn orthogonalize(mut v: Vec<f64>, basis: &[Vec<f64>]) -> Vec<f64> {
    for b in basis {
        let c = dot(&v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
    v
}

const SIZE_REFERENCE: [f64; 3] = [2.0, 1.0, 1.5];

impl EmbeddingSpace {
    pub fn new(model: &EmbeddingModel, dim: usize, n_known: usize, n_open: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ fnv1a(format!("space/{dim}").as_bytes()));
        let gauss = |rng: &mut ChaCha8Rng, s: f64| (0..dim).map(|_| s * normal(rng)).collect::<Vec<f64>>();
        let known_means: Vec<Vec<f64>> = (0..n_known).map(|_| gauss(&mut rng, model.class_spread)).collect();
        let centroid: Vec<f64> = (0..dim).map(|k| known_means.iter().map(|m| m[k]).sum::<f64>() / n_known as f64).collect();
        // orthonormal basis of the known means' affine span
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for m in &known_means {
            let d: Vec<f64> = m.iter().zip(&centroid).map(|(a, c)| a - c).collect();
            let r = orthogonalize(d, &basis);
            if dot(&r, &r) > 1e-18 {
                basis.push(unit(r));
            }
        }
        let mut open_means = Vec::with_capacity(n_open);
        let mut open_directions = Vec::with_capacity(n_open);
        for _ in 0..n_open {
            let u = unit(orthogonalize(gauss(&mut rng, 1.0), &basis));
            basis.push(u.clone());
            let shift = model.open_shift * model.noise_std;
            open_means.push(centroid.iter().zip(&u).map(|(c, d)| c + shift * d).collect());
            open_directions.push(u);
        }
        let geometry = [(); 3].map(|_| unit(gauss(&mut rng, 1.0)));
        Self { dim, known_means, open_means, geometry, open_directions, model: *model }
    }

    fn injected_mean(&self, mesh: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.seed ^ fnv1a(format!("mesh/{mesh}/{}", self.dim).as_bytes()));
        (0..self.dim).map(|_| self.model.class_spread * normal(&mut rng)).collect()
    }

    pub fn class_mean(&self, kind: &ObjectKind) -> Vec<f64> {
        match kind {
            ObjectKind::Known(c) | ObjectKind::Resized { class: c } => self.known_means[*c].clone(),
            ObjectKind::Open(o) => self.open_means[*o].clone(),
            ObjectKind::Mixed { a, b, lambda } => {
                self.known_means[*a].iter().zip(&self.known_means[*b]).map(|(x, y)| (1.0 - lambda) * x + lambda * y).collect()
            }
            ObjectKind::Injected { mesh } => self.injected_mean(mesh),
        }
    }

    /// Class mean, plus the log-size term, plus instance noise keyed by the
    /// scan and the exact box so unchanged objects keep their embedding.
    pub fn instance(&self, kind: &ObjectKind, bbox: &Box3D<f64>, scan_id: &str) -> Vec<f64> {
        let mut key = format!("{scan_id}/{}", self.dim).into_bytes();
        for v in bbox.to_array() {
            key.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.model.seed ^ fnv1a(&key));
        let g = [bbox.l, bbox.w, bbox.h];
        let log_size: Vec<f64> = (0..3).map(|k| (g[k] / SIZE_REFERENCE[k]).ln()).collect();
        let mut e = self.class_mean(kind);
        for (k, v) in e.iter_mut().enumerate() {
            let geo: f64 = (0..3).map(|a| self.geometry[a][k] * log_size[a]).sum();
            *v += self.model.geometry_weight * geo + self.model.noise_std * normal(&mut rng);
        }
        e
    }
}

/// Class means for both map dimensionalities.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModel {
    pub low: EmbeddingSpace,
    pub high: EmbeddingSpace,
}

impl SynthModel {
    pub fn new(world: &WorldConfig, emu: &DetectorEmulation) -> Self {
        let nk = world.known_specs().len();
        let no = world.open_specs().len();
        let m = &emu.embedding_model;
        Self { low: EmbeddingSpace::new(m, world.feature_dim_low, nk, no), high: EmbeddingSpace::new(m, world.feature_dim_high, nk, no) }
    }
}

/// Fabricates one feature map from objects and their instance embeddings.
pub fn fabricate_map(
    world: &WorldConfig,
    model: &EmbeddingModel,
    objects: &[(Box3D<f64>, Vec<f64>)],
    dim: usize,
    scan_id: &str,
) -> FeatureMap<f64> {
    let n = world.grid_cells();
    let origin = [-world.half() + world.cell_size / 2.0; 2];
    let mut map = FeatureMap::zeros(n, n, dim, origin, world.cell_size).expect("valid grid");
    let mut weight = vec![model.background_weight; n * n];
    for (b, e) in objects {
        let rho = 0.25 * b.l.hypot(b.w) + 0.5 * world.cell_size;
        let reach = 3.0 * rho;
        let c0 = (((b.cx - reach - origin[0]) / world.cell_size).floor().max(0.0)) as usize;
        let c1 = (((b.cx + reach - origin[0]) / world.cell_size).ceil().max(0.0) as usize).min(n - 1);
        let r0 = (((b.cy - reach - origin[1]) / world.cell_size).floor().max(0.0)) as usize;
        let r1 = (((b.cy + reach - origin[1]) / world.cell_size).ceil().max(0.0) as usize).min(n - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let [x, y] = map.cell_center(r, c);
                let d = (x - b.cx).hypot(y - b.cy);
                if d > reach {
                    continue;
                }
                let w = (-0.5 * (d / rho).powi(2)).exp();
                weight[r * n + c] += w;
                for (v, &ev) in map.cell_mut(r, c).iter_mut().zip(e) {
                    *v += w * ev;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ fnv1a(format!("map/{scan_id}/{dim}").as_bytes()));
    for (cell, w) in map.data.chunks_mut(dim).zip(&weight) {
        for v in cell {
            *v = round_f32(*v / w + model.map_noise_std * normal(&mut rng));
        }
    }
    map
}

/// `k` draws around `logits` with per-entry noise `sigma`.
pub fn emulate_mc_samples(logits: &[f64], sigma: f64, k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..k).map(|_| logits.iter().map(|&l| l + sigma * normal(rng)).collect()).collect()
}

/// Emulated detector outputs for objects and clutter.
pub struct Emulator<'a> {
    pub world: &'a WorldConfig,
    pub emu: &'a DetectorEmulation,
    pub model: &'a SynthModel,
}

impl Emulator<'_> {
    fn num_known(&self) -> usize {
        self.world.known_specs().len()
    }

    fn logits_for(&self, kind: &ObjectKind, score: f64, rng: &mut impl Rng) -> Vec<f64> {
        let lm = &self.emu.logit_model;
        let shift = lm.confidence_slope * logit(score);
        let c = self.num_known();
        let mut m = vec![0.0; c];
        match kind {
            ObjectKind::Known(k) | ObjectKind::Resized { class: k } => m[*k] = lm.known_peak + shift,
            ObjectKind::Open(_) | ObjectKind::Injected { .. } => {
                m.iter_mut().for_each(|v| *v = lm.open_floor + shift);
                m[rng.random_range(0..c)] = lm.open_peak + shift;
            }
            ObjectKind::Mixed { a, b, .. } => {
                m.iter_mut().for_each(|v| *v = lm.open_floor + shift);
                m[*a] = lm.open_peak + shift;
                m[*b] = lm.open_peak + shift;
            }
        }
        m.iter().map(|&v| v + lm.noise_std * normal(rng)).collect()
    }

    fn mc_samples(&self, logits: &[f64], open_like: bool, rng: &mut impl Rng) -> Option<Vec<Vec<f64>>> {
        let lm = &self.emu.logit_model;
        if lm.mc_samples == 0 {
            return None;
        }
        let sigma = if open_like { lm.mc_noise_open } else { lm.mc_noise_known };
        Some(emulate_mc_samples(logits, sigma, lm.mc_samples, rng))
    }

    fn jitter_box(&self, b: &Box3D<f64>, rng: &mut impl Rng) -> Result<Box3D<f64>, ModelError> {
        let e = self.emu;
        let j = e.center_jitter_std;
        let s = |rng: &mut _| (1.0 + e.size_jitter_std * normal(rng)).max(0.5);
        let dims = [b.l * s(rng), b.w * s(rng), b.h * s(rng)];
        let center = [b.cx + j * normal(rng), b.cy + j * normal(rng), b.cz + 0.5 * j * normal(rng)];
        Box3D::new(center, dims, b.yaw + e.yaw_jitter_std * normal(rng))
    }

    fn detection_embedding(&self, instance: Option<&[f64]>, rng: &mut impl Rng) -> Vec<f64> {
        let sd = self.emu.embedding_model.detection_noise_std;
        match instance {
            Some(e) => e.iter().map(|&v| round_f32(v + sd * normal(rng))).collect(),
            None => (0..self.world.feature_dim_low).map(|_| round_f32(self.emu.embedding_model.map_noise_std * normal(rng))).collect(),
        }
    }

    /// Emulates the detection of one object; `None` when the detector misses it.
    pub fn detect(
        &self,
        kind: &ObjectKind,
        gt: &Box3D<f64>,
        instance_low: &[f64],
        always_hit: bool,
        rng: &mut impl Rng,
    ) -> Result<Option<Detection<f64>>, ModelError> {
        let e = self.emu;
        let miss = if kind.looks_known() { e.miss_rate_known } else { e.miss_rate_open };
        let hit = rng.random::<f64>() >= miss;
        if !(hit || always_hit) {
            return Ok(None);
        }
        let bbox = self.jitter_box(gt, rng)?;
        let score = beta(rng, if kind.looks_known() { e.score_known } else { e.score_open });
        let logits = self.logits_for(kind, score, rng);
        let samples = self.mc_samples(&logits, !kind.looks_known(), rng);
        let embedding = self.detection_embedding(Some(instance_low), rng);
        let mut d = Detection::new(bbox, score, logits, embedding)?;
        if let Some(s) = samples {
            d = d.with_samples(s)?;
        }
        Ok(Some(d))
    }

    /// False detections placed away from every object.
    pub fn clutter(&self, objects: &[Box3D<f64>], rng: &mut impl Rng) -> Result<Vec<Detection<f64>>, ModelError> {
        let e = self.emu;
        if e.clutter_rate <= 0.0 {
            return Ok(Vec::new());
        }
        let n = Poisson::new(e.clutter_rate).expect("positive rate").sample(rng) as usize;
        let known = self.world.known_specs();
        let lm = &e.logit_model;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let spec = known[rng.random_range(0..known.len())];
            let dims = sample_dims(spec, rng);
            let r = dims[0].hypot(dims[1]) / 2.0;
            let lim = self.world.half() - r;
            if lim <= 0.0 {
                continue;
            }
            let mut placed = None;
            for _ in 0..50 {
                let b = Box3D::new([rng.random_range(-lim..=lim), rng.random_range(-lim..=lim), dims[2] / 2.0], dims, rng.random_range(-PI..PI))?;
                if objects.iter().all(|o| bev_distance(o, &b) >= e.clutter_clearance) {
                    placed = Some(b);
                    break;
                }
            }
            let Some(bbox) = placed else { continue };
            let score = beta(rng, e.score_clutter);
            let mut m = vec![0.0; known.len()];
            m[rng.random_range(0..known.len())] = lm.clutter_peak + lm.confidence_slope * logit(score);
            let logits: Vec<f64> = m.iter().map(|&v| v + lm.noise_std * normal(rng)).collect();
            let samples = self.mc_samples(&logits, true, rng);
            let embedding = self.detection_embedding(None, rng);
            let mut d = Detection::new(bbox, score, logits, embedding)?;
            if let Some(s) = samples {
                d = d.with_samples(s)?;
            }
            out.push(d);
        }
        Ok(out)
    }
}

fn sample_dims(spec: &ClassSpec, rng: &mut impl Rng) -> [f64; 3] {
    [0, 1, 2].map(|k| {
        let m = spec.size_mean[k];
        (m + spec.size_std[k] * normal(rng)).max(0.3 * m)
    })
}

fn kind_of(label: ClassLabel) -> ObjectKind {
    match label {
        ClassLabel::Known(k) => ObjectKind::Known(k),
        ClassLabel::Open(o) => ObjectKind::Open(o),
        ClassLabel::Forged => ObjectKind::Injected { mesh: "unknown".into() },
    }
}

pub fn scan_id(index: usize) -> String {
    format!("scan_{index:05}")
}

fn fabricate_maps(world: &WorldConfig, emu: &DetectorEmulation, model: &SynthModel, scan: &mut Scan<f64>, kinds: &[ObjectKind]) {
    if !world.fabricate_maps {
        scan.feature_map_low = None;
        scan.feature_map_high = None;
        return;
    }
    let em = &emu.embedding_model;
    for (space, slot) in [(&model.low, &mut scan.feature_map_low), (&model.high, &mut scan.feature_map_high)] {
        let objects: Vec<(Box3D<f64>, Vec<f64>)> =
            scan.ground_truth.iter().zip(kinds).map(|(g, k)| (g.bbox, space.instance(k, &g.bbox, &scan.scan_id))).collect();
        *slot = Some(fabricate_map(world, em, &objects, space.dim, &scan.scan_id));
    }
}

/// Generates scan `index` of the world.
pub fn generate_scan(world: &WorldConfig, emu: &DetectorEmulation, model: &SynthModel, index: usize) -> Result<Scan<f64>, SynthError> {
    let id = scan_id(index);
    let mut rng = ChaCha8Rng::seed_from_u64(scan_seed(world.rng_seed, &id));
    let mut scan = Scan::empty(id);
    let open_scan = rng.random::<f64>() < world.open_scan_fraction;
    let (imu, isd) = world.intensity_stats;
    let intensity = Normal::new(imu, isd).expect("validated intensity");
    let half = world.half();

    let mut pts: Vec<Point<f64>> = (0..world.ground_points)
        .map(|_| {
            let x = rng.random_range(-half..half);
            let y = rng.random_range(-half..half);
            let z = rng.random_range(-0.3..-0.05);
            Point::new(round_f32(x), round_f32(y), round_f32(z), round_f32(intensity.sample(&mut rng).max(0.0)))
        })
        .collect();

    let mut kinds = Vec::new();
    let (mut known_i, mut open_i) = (0usize, 0usize);
    for spec in &world.classes {
        let label = if spec.open {
            open_i += 1;
            ClassLabel::Open(open_i - 1)
        } else {
            known_i += 1;
            ClassLabel::Known(known_i - 1)
        };
        if spec.open && !open_scan {
            continue;
        }
        let lo = if spec.open { spec.count_range.0.max(1) } else { spec.count_range.0 };
        let count = rng.random_range(lo..=spec.count_range.1.max(lo));
        for _ in 0..count {
            let dims = sample_dims(spec, &mut rng);
            let r = dims[0].hypot(dims[1]) / 2.0;
            let lim = half - r;
            if lim <= 0.0 {
                continue;
            }
            let mut placed = None;
            for _ in 0..100 {
                let b = Box3D::new(
                    [rng.random_range(-lim..=lim), rng.random_range(-lim..=lim), dims[2] / 2.0],
                    dims,
                    rng.random_range(-PI..PI),
                )?;
                // circumscribed circles kept apart guarantees disjoint boxes
                let free = scan.ground_truth.iter().all(|g| {
                    bev_distance(&g.bbox, &b) > g.bbox.l.hypot(g.bbox.w) / 2.0 + r + 0.2
                });
                if free {
                    placed = Some(b);
                    break;
                }
            }
            let Some(bbox) = placed else { continue };
            let n = rng.random_range(spec.points_range.0..=spec.points_range.1);
            let start = pts.len();
            for _ in 0..n {
                let local = [
                    rng.random_range(-0.5..=0.5) * bbox.l,
                    rng.random_range(-0.5..=0.5) * bbox.w,
                    rng.random_range(-0.5..=0.5) * bbox.h,
                ];
                let [x, y, z] = from_box_frame(&bbox, local);
                pts.push(Point::new(x, y, z, round_f32(intensity.sample(&mut rng).max(0.0))));
            }
            scan.ground_truth.push(GroundTruthObject { bbox, label, point_indices: Some((start..pts.len()).collect()) });
            kinds.push(kind_of(label));
        }
    }
    scan.cloud = PointCloud::new(pts);
    snap_points_inside(&mut scan);

    let em = Emulator { world, emu, model };
    for (g, kind) in scan.ground_truth.iter().zip(&kinds) {
        let inst = model.low.instance(kind, &g.bbox, &scan.scan_id);
        if let Some(d) = em.detect(kind, &g.bbox, &inst, false, &mut rng)? {
            scan.detections.push(d);
        }
    }
    let boxes: Vec<Box3D<f64>> = scan.ground_truth.iter().map(|g| g.bbox).collect();
    let clutter = em.clutter(&boxes, &mut rng)?;
    scan.detections.extend(clutter);
    fabricate_maps(world, emu, model, &mut scan, &kinds);
    Ok(scan)
}

/// Rounds object points to `f32` (the blob precision) while keeping each
/// one inside its box; points that would leave it stay in `f64`.
fn snap_points_inside(scan: &mut Scan<f64>) {
    for g in &scan.ground_truth {
        for &i in g.point_indices.as_deref().unwrap_or_default() {
            let p = scan.cloud.points[i];
            let q = Point::new(round_f32(p.x), round_f32(p.y), round_f32(p.z), p.intensity);
            if crate::geometry::contains_point(&g.bbox, q.x, q.y, q.z) {
                scan.cloud.points[i] = q;
            }
        }
    }
}

/// Generates every scan in memory.
pub fn generate_scans(world: &WorldConfig, emu: &DetectorEmulation) -> Result<Vec<Scan<f64>>, SynthError> {
    world.validate()?;
    emu.validate()?;
    let model = SynthModel::new(world, emu);
    (0..world.n_scans).into_par_iter().map(|i| generate_scan(world, emu, &model, i)).collect()
}

/// Save options used for generated scans.
pub fn storage_options() -> SaveOptions {
    SaveOptions { points: Storage::Blob, embeddings: Storage::Blob }
}

/// Writes scans, `manifest.json` and the `world.json` echo under `out_dir`.
pub fn generate_world(world: &WorldConfig, emu: &DetectorEmulation, out_dir: &Path) -> Result<(PathBuf, DatasetManifest), SynthError> {
    world.validate()?;
    emu.validate()?;
    let scans_dir = out_dir.join("scans");
    std::fs::create_dir_all(&scans_dir).map_err(|e| ScanIoError::Io { path: scans_dir.clone(), source: e })?;
    let model = SynthModel::new(world, emu);
    let partition = world.partition();
    let paths: Vec<PathBuf> = (0..world.n_scans)
        .into_par_iter()
        .map(|i| {
            let scan = generate_scan(world, emu, &model, i)?;
            let rel = PathBuf::from("scans").join(format!("{}.json", scan.scan_id));
            save_scan(&scan, &out_dir.join(&rel), &partition, storage_options())?;
            Ok(rel)
        })
        .collect::<Result<_, SynthError>>()?;
    let manifest = DatasetManifest {
        name: world.name.clone(),
        known_classes: partition.known,
        open_classes: partition.open,
        scan_paths: paths,
        intensity_stats: world.intensity_stats,
        root: out_dir.to_path_buf(),
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save(&manifest_path)?;
    SynthConfig { world: world.clone(), emulation: emu.clone() }.save(&out_dir.join(WORLD_ECHO_FILE))?;
    Ok((manifest_path, manifest))
}

fn origin_kind(original: &Scan<f64>, origin: &ForgeOrigin) -> ObjectKind {
    let class_of = |i: usize| match original.ground_truth.get(i).map(|g| g.label) {
        Some(ClassLabel::Known(k)) => k,
        _ => 0,
    };
    match origin {
        ForgeOrigin::Resized { source, .. } => ObjectKind::Resized { class: class_of(*source) },
        ForgeOrigin::Mixed { a, b, lambda } => ObjectKind::Mixed { a: class_of(*a), b: class_of(*b), lambda: *lambda },
        ForgeOrigin::Injected { mesh, .. } => ObjectKind::Injected { mesh: mesh.clone() },
    }
}

/// Re-renders a forged scan through the synthetic sensor: feature maps are
/// refabricated with the new objects, detections of replaced objects are
/// dropped, and every forged object gets a fresh (always-hit) detection.
pub fn refresh_forged(world: &WorldConfig, emu: &DetectorEmulation, model: &SynthModel, original: &Scan<f64>, forged: &ForgedScan) -> Result<Scan<f64>, SynthError> {
    let mut scan = forged.scan.clone();
    let mut kinds: Vec<ObjectKind> = scan.ground_truth.iter().map(|g| kind_of(g.label)).collect();
    for (i, origin) in &forged.forged {
        kinds[*i] = origin_kind(original, origin);
    }
    // detections that answered an object which has since been replaced
    let probe_cfg = RunConfig { delta_thresh: 0.0, ..RunConfig::default() };
    let replaced: Vec<usize> = assign(original, &probe_cfg)
        .map(|a| a.pairs.into_iter().filter(|p| forged.forged.iter().any(|(i, _)| *i == p.gt)).map(|p| p.detection).collect())
        .unwrap_or_default();
    let mut keep = (0..scan.detections.len()).map(|i| !replaced.contains(&i));
    scan.detections.retain(|_| keep.next().unwrap_or(true));

    let mut rng = ChaCha8Rng::seed_from_u64(scan_seed(world.rng_seed ^ fnv1a(b"refresh"), &scan.scan_id));
    let em = Emulator { world, emu, model };
    for (i, _) in &forged.forged {
        let g = &scan.ground_truth[*i];
        let inst = model.low.instance(&kinds[*i], &g.bbox, &scan.scan_id);
        if let Some(d) = em.detect(&kinds[*i], &g.bbox, &inst, true, &mut rng)? {
            scan.detections.push(d);
        }
    }
    fabricate_maps(world, emu, model, &mut scan, &kinds);
    Ok(scan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{box_overlap_3d, points_in_box};
    use crate::io::{filter_open_subset, load_dataset};
    use crate::matcher::{hit_rates_from_assignments, match_scans};

    fn tiny(n: usize) -> WorldConfig {
        WorldConfig { ground_points: 50, ..WorldConfig::compact(n, 3) }
    }

    #[test]
    fn scans_validate_and_objects_are_disjoint() {
        let w = tiny(6);
        for s in generate_scans(&w, &DetectorEmulation::default()).unwrap() {
            s.cloud.validate().unwrap();
            for d in &s.detections {
                d.validate(Some(3)).unwrap();
            }
            for (i, g) in s.ground_truth.iter().enumerate() {
                let members = g.point_indices.as_ref().unwrap();
                let inside = points_in_box(&s.cloud, &g.bbox);
                assert!(members.iter().all(|m| inside.contains(m)));
                assert!(g.bbox.z_min().abs() < 1e-12);
                for h in &s.ground_truth[..i] {
                    assert_eq!(box_overlap_3d(&g.bbox, &h.bbox), 0.0);
                }
            }
            let m = s.feature_map_high.as_ref().unwrap();
            assert_eq!((m.rows, m.dim), (w.grid_cells(), w.feature_dim_high));
        }
    }

    #[test]
    fn open_means_are_shifted_orthogonally() {
        let m = DetectorEmulation::default().embedding_model;
        let s = EmbeddingSpace::new(&m, 64, 3, 1);
        let c: Vec<f64> = (0..64).map(|k| s.known_means.iter().map(|v| v[k]).sum::<f64>() / 3.0).collect();
        let u = &s.open_directions[0];
        for k in &s.known_means {
            let d: Vec<f64> = k.iter().zip(&c).map(|(a, b)| a - b).collect();
            assert!(dot(&d, u).abs() < 1e-10);
        }
        let shift: Vec<f64> = s.open_means[0].iter().zip(&c).map(|(a, b)| a - b).collect();
        assert!((dot(&shift, &shift).sqrt() - m.open_shift * m.noise_std).abs() < 1e-10);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let w = tiny(4);
        let e = DetectorEmulation::default();
        let a = generate_scans(&w, &e).unwrap();
        let model = SynthModel::new(&w, &e);
        let b: Vec<_> = (0..4).map(|i| generate_scan(&w, &e, &model, i).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_detector_hits_everything() {
        let w = WorldConfig { fabricate_maps: false, ..tiny(8) };
        let scans = generate_scans(&w, &DetectorEmulation::perfect()).unwrap();
        for d in [0.1, 2.0] {
            let cfg = RunConfig { d_thresh: d, delta_thresh: 0.0, ..RunConfig::default() };
            let h = hit_rates_from_assignments(&scans, &cfg).unwrap();
            assert_eq!((h.hits_open, h.hits_closed), (1.0, 1.0));
            for s in &scans {
                let a = assign(s, &cfg).unwrap();
                assert!(a.pairs.iter().all(|p| p.distance == 0.0));
            }
        }
    }

    #[test]
    fn no_open_scans_means_empty_subset() {
        let dir = tempfile::tempdir().unwrap();
        let w = WorldConfig { open_scan_fraction: 0.0, fabricate_maps: false, ..tiny(3) };
        let (_, m) = generate_world(&w, &DetectorEmulation::default(), dir.path()).unwrap();
        assert_eq!(m.scan_paths.len(), 3);
        assert!(filter_open_subset(&m).unwrap().scan_paths.is_empty());
    }

    #[test]
    fn written_world_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        let w = tiny(3);
        let e = DetectorEmulation::default();
        let (path, _) = generate_world(&w, &e, dir.path()).unwrap();
        let m = DatasetManifest::load(&path).unwrap();
        assert_eq!(load_dataset(&m).unwrap(), generate_scans(&w, &e).unwrap());
        assert_eq!(SynthConfig::load(&dir.path().join(WORLD_ECHO_FILE)).unwrap(), SynthConfig { world: w, emulation: e });
    }

    #[test]
    fn mc_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = emulate_mc_samples(&[1.0, -1.0], 0.0, 2, &mut rng);
        assert_eq!(s[0], s[1]);
        let s = emulate_mc_samples(&[0.5], 0.7, 10_000, &mut rng);
        let mean = s.iter().map(|v| v[0]).sum::<f64>() / 1e4;
        let var = s.iter().map(|v| (v[0] - mean).powi(2)).sum::<f64>() / 1e4;
        assert!((var / 0.49 - 1.0).abs() < 0.1);
    }

    #[test]
    fn hit_rates_fall_with_delta() {
        let w = WorldConfig { fabricate_maps: false, ..tiny(20) };
        let scans = generate_scans(&w, &DetectorEmulation::default()).unwrap();
        let mut last = (2.0, 2.0);
        for delta in [0.05, 0.3, 0.5] {
            let cfg = RunConfig { delta_thresh: delta, ..RunConfig::default() };
            let h = hit_rates_from_assignments(&scans, &cfg).unwrap();
            assert!(h.hits_open <= last.0 && h.hits_closed <= last.1);
            last = (h.hits_open, h.hits_closed);
        }
        let _ = match_scans::<f64>(&[], &RunConfig::default()).unwrap();
    }
}
