use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScanIoError;
use crate::scorers::{McAggregation, ScoreMethod, ScorerConfig};

/// Key that orders predictions before greedy matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SortMode {
    #[default]
    DetectorScore,
    OodScore,
}

/// Which scans enter evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum EvalSubset {
    AllScans,
    #[default]
    OpenScansOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum DistanceMode {
    #[default]
    Euclidean3D,
    EuclideanBev,
}

impl SortMode {
    pub fn name(self) -> &'static str {
        match self {
            SortMode::DetectorScore => "DetectorScore",
            SortMode::OodScore => "OodScore",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "detectorscore" | "detector" | "score" => Some(SortMode::DetectorScore),
            "oodscore" | "ood" => Some(SortMode::OodScore),
            _ => None,
        }
    }
}

impl EvalSubset {
    pub fn name(self) -> &'static str {
        match self {
            EvalSubset::AllScans => "AllScans",
            EvalSubset::OpenScansOnly => "OpenScansOnly",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "allscans" | "all" => Some(EvalSubset::AllScans),
            "openscansonly" | "open" => Some(EvalSubset::OpenScansOnly),
            _ => None,
        }
    }
}

impl DistanceMode {
    pub fn name(self) -> &'static str {
        match self {
            DistanceMode::Euclidean3D => "Euclidean3D",
            DistanceMode::EuclideanBev => "EuclideanBEV",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "euclidean3d" | "3d" => Some(DistanceMode::Euclidean3D),
            "euclideanbev" | "bev" => Some(DistanceMode::EuclideanBev),
            _ => None,
        }
    }
}

/// Evaluation protocol settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Maximum center distance for a match, meters.
    pub d_thresh: f64,
    /// Minimum detector score for a prediction to enter matching.
    pub delta_thresh: f64,
    /// OOD score above which a prediction is declared unknown.
    pub ood_thresh: f64,
    pub sort_mode: SortMode,
    pub eval_subset: EvalSubset,
    pub distance_mode: DistanceMode,
    pub rng_seed: u64,
    pub scorer: ScorerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_thresh: 2.0,
            delta_thresh: 0.3,
            ood_thresh: 0.5,
            sort_mode: SortMode::DetectorScore,
            eval_subset: EvalSubset::OpenScansOnly,
            distance_mode: DistanceMode::Euclidean3D,
            rng_seed: 0,
            scorer: ScorerConfig::default(),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ScanIoError> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ScanIoError::Config(format!("line {}: expected key=value", n + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ScanIoError::Config(format!("line {}: duplicate key {key}", n + 1)));
        }
    }
    Ok(out)
}

pub(crate) fn parse_value<V: std::str::FromStr>(key: &str, v: &str) -> Result<V, ScanIoError> {
    v.parse().map_err(|_| ScanIoError::Config(format!("{key}: cannot parse {v:?}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ScanIoError> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.d_thresh > 0.0 && self.d_thresh.is_finite()) {
            return Err(ScanIoError::Config("d_thresh must be positive".into()));
        }
        if !in_unit(self.delta_thresh) {
            return Err(ScanIoError::Config("delta_thresh must lie in [0, 1]".into()));
        }
        if !in_unit(self.ood_thresh) {
            return Err(ScanIoError::Config("ood_thresh must lie in [0, 1]".into()));
        }
        self.scorer.validate().map_err(|e| ScanIoError::Config(e.to_string()))
    }

    /// Applies recognized keys from `kv`, removing them; leftovers are returned to the caller.
    pub fn apply_kv(&mut self, kv: &mut BTreeMap<String, String>) -> Result<(), ScanIoError> {
        let bad = |k: &str, v: &str| ScanIoError::Config(format!("{k}: unrecognized value {v:?}"));
        let keys: Vec<String> = kv.keys().cloned().collect();
        for k in keys {
            let v = kv[&k].clone();
            match k.as_str() {
                "d_thresh" => self.d_thresh = parse_value(&k, &v)?,
                "delta_thresh" => self.delta_thresh = parse_value(&k, &v)?,
                "ood_thresh" => self.ood_thresh = parse_value(&k, &v)?,
                "sort_mode" => self.sort_mode = SortMode::parse(&v).ok_or_else(|| bad(&k, &v))?,
                "eval_subset" => self.eval_subset = EvalSubset::parse(&v).ok_or_else(|| bad(&k, &v))?,
                "distance_mode" => self.distance_mode = DistanceMode::parse(&v).ok_or_else(|| bad(&k, &v))?,
                "rng_seed" => self.rng_seed = parse_value(&k, &v)?,
                "scorer.method" => {
                    let m = ScoreMethod::parse(&v).ok_or_else(|| bad(&k, &v))?;
                    let t = if kv.contains_key("scorer.temperature") { self.scorer.temperature } else { ScorerConfig::new(m).temperature };
                    self.scorer.method = m;
                    self.scorer.temperature = t;
                }
                "scorer.temperature" => continue,
                "scorer.mc_aggregation" => self.scorer.mc_aggregation = McAggregation::parse(&v).ok_or_else(|| bad(&k, &v))?,
                _ => continue,
            }
            kv.remove(&k);
        }
        // temperature last so it overrides a method default
        if let Some(v) = kv.remove("scorer.temperature") {
            self.scorer.temperature = parse_value("scorer.temperature", &v)?;
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self, ScanIoError> {
        let mut kv = parse_kv(text)?;
        let mut cfg = Self::default();
        cfg.apply_kv(&mut kv)?;
        if let Some(k) = kv.keys().next() {
            return Err(ScanIoError::Config(format!("unknown key {k}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScanIoError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScanIoError::io(path, e))?;
        Self::from_kv_str(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d_thresh = {}", self.d_thresh);
        let _ = writeln!(s, "delta_thresh = {}", self.delta_thresh);
        let _ = writeln!(s, "ood_thresh = {}", self.ood_thresh);
        let _ = writeln!(s, "sort_mode = {}", self.sort_mode.name());
        let _ = writeln!(s, "eval_subset = {}", self.eval_subset.name());
        let _ = writeln!(s, "distance_mode = {}", self.distance_mode.name());
        let _ = writeln!(s, "rng_seed = {}", self.rng_seed);
        let _ = writeln!(s, "scorer.method = {}", self.scorer.method.name());
        let _ = writeln!(s, "scorer.temperature = {}", self.scorer.temperature);
        let _ = writeln!(s, "scorer.mc_aggregation = {}", self.scorer.mc_aggregation.name());
        s
    }
}
