use std::path::{Path, PathBuf};

use ood3d::forge::{ForgeConfig, ForgeMethod};
use ood3d::head::TrainConfig;
use ood3d::io::{RunConfig, SortMode};
use ood3d::probe::ProbeConfig;
use ood3d::scorers::{ScoreMethod, ScorerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the head's positive labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TrainMode {
    /// Real open-class objects are the positives.
    Oracle,
    /// Pseudo-unknowns from `forge.method`.
    #[default]
    Forged,
}

/// Everything `train-head` and `forge` need besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadPipelineConfig {
    pub mode: TrainMode,
    pub forge: ForgeConfig,
    pub probe: ProbeConfig,
    /// Defaults to batches of 32: desk-scale worlds yield only a few thousand inputs.
    pub train: TrainConfig,
    /// Matching gates used to attach labels to detections.
    pub label_d_thresh: f64,
    pub label_delta_thresh: f64,
    /// Directory of `.off` meshes for injection; the procedural bank otherwise.
    pub mesh_dir: Option<PathBuf>,
}

impl Default for HeadPipelineConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::default(),
            forge: ForgeConfig::default(),
            probe: ProbeConfig::default(),
            train: TrainConfig { batch_size: 32, ..TrainConfig::default() },
            label_d_thresh: 2.0,
            label_delta_thresh: 0.0,
            mesh_dir: None,
        }
    }
}

impl HeadPipelineConfig {
    pub fn oracle() -> Self {
        Self { mode: TrainMode::Oracle, ..Self::default() }
    }

    pub fn forged(method: ForgeMethod, seed: u64) -> Self {
        Self { forge: ForgeConfig::new(method, seed), ..Self::default() }.seeded(seed)
    }

    /// `oracle` or a forge method name.
    pub fn set_method(&mut self, name: &str) -> Result<(), CliError> {
        if name.eq_ignore_ascii_case("oracle") {
            self.mode = TrainMode::Oracle;
            return Ok(());
        }
        let m = ForgeMethod::parse(name).ok_or_else(|| CliError::Config(format!("unknown forge method {name:?}")))?;
        self.mode = TrainMode::Forged;
        self.forge.method = m;
        Ok(())
    }

    pub fn method_name(&self) -> &'static str {
        match self.mode {
            TrainMode::Oracle => "oracle",
            TrainMode::Forged => self.forge.method.name(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.forge.rng_seed = seed;
        self.train.rng_seed = seed;
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.set_seed(seed);
        self
    }

    pub fn labelling(&self) -> RunConfig {
        RunConfig { d_thresh: self.label_d_thresh, delta_thresh: self.label_delta_thresh, ..RunConfig::default() }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.forge.validate()?;
        self.train.validate()?;
        self.labelling().validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// How detections get their OOD score during evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalMethod {
    Scorer(ScorerConfig),
    /// A trained head model file.
    Head(PathBuf),
}

impl EvalMethod {
    /// A scorer name (`default`, `energy`, `odin`, ...) or `head:<model path>`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        if let Some(p) = s.strip_prefix("head:") {
            return Ok(EvalMethod::Head(PathBuf::from(p)));
        }
        ScoreMethod::parse(s)
            .map(|m| EvalMethod::Scorer(ScorerConfig::new(m)))
            .ok_or_else(|| CliError::Config(format!("unknown scorer {s:?}")))
    }

    /// Label used in report rows.
    pub fn label(&self) -> String {
        match self {
            EvalMethod::Scorer(c) => c.method.name().to_string(),
            EvalMethod::Head(p) => format!("head:{}", p.file_stem().and_then(|s| s.to_str()).unwrap_or("model")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepDoc {
    d_thresh: Vec<f64>,
    delta_thresh: Vec<f64>,
    #[serde(default = "default_sort")]
    sort_mode: Vec<String>,
    methods: Vec<String>,
}

fn default_sort() -> Vec<String> {
    vec![SortMode::DetectorScore.name().to_string()]
}

/// Grid of matching settings crossed with a list of scoring methods.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub d_thresh: Vec<f64>,
    pub delta_thresh: Vec<f64>,
    pub sort_mode: Vec<SortMode>,
    pub methods: Vec<EvalMethod>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.d_thresh.is_empty() || self.delta_thresh.is_empty() || self.sort_mode.is_empty() || self.methods.is_empty() {
            return Err(CliError::Config("sweep grid and method list must be non-empty".into()));
        }
        for &d in &self.d_thresh {
            for &delta in &self.delta_thresh {
                RunConfig { d_thresh: d, delta_thresh: delta, ..RunConfig::default() }.validate()?;
            }
        }
        Ok(())
    }

    /// Reads a JSON grid: `{"d_thresh": [..], "delta_thresh": [..], "sort_mode": [..], "methods": [..]}`.
    /// Head paths are relative to the grid file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let doc: SweepDoc = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let sort_mode = doc
            .sort_mode
            .iter()
            .map(|s| SortMode::parse(s).ok_or_else(|| CliError::Config(format!("unknown sort mode {s:?}"))))
            .collect::<Result<_, _>>()?;
        let methods = doc
            .methods
            .iter()
            .map(|m| {
                EvalMethod::parse(m).map(|e| match e {
                    EvalMethod::Head(p) if p.is_relative() => EvalMethod::Head(base.join(p)),
                    other => other,
                })
            })
            .collect::<Result<_, _>>()?;
        let spec = SweepSpec { d_thresh: doc.d_thresh, delta_thresh: doc.delta_thresh, sort_mode, methods };
        spec.validate()?;
        Ok(spec)
    }
}
