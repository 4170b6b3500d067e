use std::path::{Path, PathBuf};

use ood3d::forge::{
    forge_gaussian, forge_inject, forge_pointmixup, forge_resize, forge_topk, write_records, ForgeError, ForgeMethod, ForgedScan,
    MeshBank, TrainingRecord,
};
use ood3d::head::{train, HeadInput, InputLayout, TrainedHead};
use ood3d::io::{filter_open_subset, load_dataset, save_scan, DatasetManifest, EvalSubset, RunConfig};
use ood3d::matcher::{assign, hit_rates, match_scans, HitRates};
use ood3d::metrics::{auroc, evaluate, MetricReport, ScoredSample};
use ood3d::model::Scan;
use ood3d::scorers::score;
use ood3d::synth::{generate_world, refresh_forged, storage_options, SynthConfig, SynthModel, WORLD_ECHO_FILE};
use rayon::prelude::*;

use crate::config::{EvalMethod, HeadPipelineConfig, SweepSpec, TrainMode};
use crate::report::{parse_csv, render_csv, render_markdown, write_text, ReportRow};
use crate::CliError;

/// Generates a synthetic world; the config file is a `world.json`-style
/// document and `seed` overrides its world seed. Returns the manifest path.
pub fn cmd_synth(config: Option<&Path>, out_dir: &Path, seed: Option<u64>) -> Result<PathBuf, CliError> {
    let mut cfg = match config {
        Some(p) => SynthConfig::load(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.world.rng_seed = s;
    }
    cfg.validate()?;
    let (path, _) = generate_world(&cfg.world, &cfg.emulation, out_dir)?;
    Ok(path)
}

/// Loads the scans entering evaluation.
pub fn select_scans(manifest: &DatasetManifest, subset: EvalSubset) -> Result<Vec<Scan<f64>>, CliError> {
    let m = match subset {
        EvalSubset::AllScans => manifest.clone(),
        EvalSubset::OpenScansOnly => filter_open_subset(manifest)?,
    };
    Ok(load_dataset(&m)?)
}

enum LoadedScorer {
    Single(ood3d::scorers::ScorerConfig),
    Head(TrainedHead),
}

impl LoadedScorer {
    fn load(method: &EvalMethod) -> Result<Self, CliError> {
        Ok(match method {
            EvalMethod::Scorer(c) => {
                c.validate()?;
                LoadedScorer::Single(*c)
            }
            EvalMethod::Head(p) => LoadedScorer::Head(TrainedHead::load(p)?),
        })
    }

    fn score_scan(&self, scan: &Scan<f64>) -> Result<Vec<f64>, String> {
        scan.detections
            .iter()
            .enumerate()
            .map(|(i, d)| match self {
                LoadedScorer::Single(c) => score(d, c).map_err(|e| format!("{}: detection {i}: {e}", scan.scan_id)),
                LoadedScorer::Head(h) => h
                    .layout
                    .input_for(scan, d, &h.probe)
                    .and_then(|x| h.head.forward(&x))
                    .map_err(|e| format!("{}: detection {i}: {e}", scan.scan_id)),
            })
            .collect()
    }
}

/// Returns annotated copies of `scans`; every failing scan is listed in the error.
pub fn score_scans(scans: &[Scan<f64>], method: &EvalMethod) -> Result<Vec<Scan<f64>>, CliError> {
    let scorer = LoadedScorer::load(method)?;
    let results: Vec<Result<Scan<f64>, String>> = scans
        .par_iter()
        .map(|s| {
            let scores = scorer.score_scan(s)?;
            let mut out = s.clone();
            for (d, v) in out.detections.iter_mut().zip(scores) {
                d.ood_score = Some(v);
            }
            Ok(out)
        })
        .collect();
    let failures: Vec<String> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    if !failures.is_empty() {
        return Err(CliError::Data(format!("{} scan(s) could not be scored:\n  {}", failures.len(), failures.join("\n  "))));
    }
    Ok(results.into_iter().map(|r| r.expect("failures handled")).collect())
}

fn write_dataset(manifest: &DatasetManifest, scans: &[Scan<f64>], out_dir: &Path) -> Result<PathBuf, CliError> {
    let partition = manifest.partition();
    let paths: Vec<PathBuf> = scans.iter().map(|s| PathBuf::from("scans").join(format!("{}.json", s.scan_id))).collect();
    scans
        .par_iter()
        .zip(&paths)
        .try_for_each(|(s, rel)| save_scan(s, &out_dir.join(rel), &partition, storage_options()))?;
    let out = DatasetManifest { scan_paths: paths, root: out_dir.to_path_buf(), ..manifest.clone() };
    let path = out_dir.join("manifest.json");
    out.save(&path)?;
    let echo = manifest.root.join(WORLD_ECHO_FILE);
    if echo.exists() && manifest.root != out_dir {
        std::fs::copy(&echo, out_dir.join(WORLD_ECHO_FILE)).map_err(|e| CliError::Io(format!("{}: {e}", echo.display())))?;
    }
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir.join("scans")).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Annotates every scan with `ood_score` and writes the dataset to
/// `out_dir`, which may be the input directory. Returns the new manifest path.
pub fn cmd_score(manifest_path: &Path, method: &EvalMethod, out_dir: &Path) -> Result<PathBuf, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let scans = load_dataset(&manifest)?;
    let scored = score_scans(&scans, method)?;
    create_dir(out_dir)?;
    write_dataset(&manifest, &scored, out_dir)
}

fn world_echo(manifest: &DatasetManifest) -> Result<Option<SynthConfig>, CliError> {
    let p = manifest.root.join(WORLD_ECHO_FILE);
    if p.exists() {
        Ok(Some(SynthConfig::load(&p)?))
    } else {
        Ok(None)
    }
}

fn layout_for(scans: &[Scan<f64>], cfg: &HeadPipelineConfig, num_logits: usize) -> Result<InputLayout, CliError> {
    for s in scans {
        if let Some(d) = s.detections.first() {
            let emb = ood3d::head::detection_embedding(s, d, &cfg.probe)?;
            return Ok(InputLayout { embedding_dim: emb.len(), num_logits, normalizer: Default::default() });
        }
    }
    Err(CliError::Data("dataset has no detections".into()))
}

/// Head inputs for every matched detection, labelled by the open flag of its ground truth.
fn matched_inputs(scan: &Scan<f64>, cfg: &HeadPipelineConfig, layout: &InputLayout) -> Result<Vec<HeadInput<f64>>, CliError> {
    let a = assign(scan, &cfg.labelling())?;
    a.pairs
        .iter()
        .map(|p| {
            let x = layout.input_for(scan, &scan.detections[p.detection], &cfg.probe)?;
            Ok(HeadInput { x, y: u8::from(scan.ground_truth[p.gt].is_open()) })
        })
        .collect()
}

fn forge_scan(
    scan: &Scan<f64>,
    manifest: &DatasetManifest,
    bank: &MeshBank,
    cfg: &HeadPipelineConfig,
) -> Result<Option<ForgedScan>, CliError> {
    let r = match cfg.forge.method {
        ForgeMethod::Resizing => forge_resize(scan, &cfg.forge),
        ForgeMethod::PointMixup => forge_pointmixup(scan, &cfg.forge),
        ForgeMethod::MeshInjection => forge_inject(scan, bank, manifest, &cfg.forge),
        ForgeMethod::GaussianNoise | ForgeMethod::TopK => unreachable!("not a scan-editing method"),
    };
    match r {
        Ok(f) => Ok(Some(f)),
        // scans that cannot host a pseudo-unknown are skipped
        Err(ForgeError::TooFewEligible { .. } | ForgeError::NoFreeSpace(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn mesh_bank(cfg: &HeadPipelineConfig) -> Result<MeshBank, CliError> {
    match &cfg.mesh_dir {
        Some(d) => MeshBank::with_off_dir(d).map_err(|e| CliError::Config(format!("{}: {e}", d.display()))),
        None => Ok(MeshBank::procedural()),
    }
}

/// Forges and re-renders every eligible scan. Without a world echo the
/// forged scans are returned unrendered (no detections on new objects).
fn forged_scans(manifest: &DatasetManifest, scans: &[Scan<f64>], cfg: &HeadPipelineConfig) -> Result<Vec<Scan<f64>>, CliError> {
    let bank = mesh_bank(cfg)?;
    let echo = world_echo(manifest)?;
    let model = echo.as_ref().map(|e| SynthModel::new(&e.world, &e.emulation));
    let out: Vec<Option<Scan<f64>>> = scans
        .par_iter()
        .map(|s| {
            let Some(f) = forge_scan(s, manifest, &bank, cfg)? else { return Ok(None) };
            if f.forged.is_empty() {
                return Ok(None);
            }
            Ok(Some(match (&echo, &model) {
                (Some(e), Some(m)) => refresh_forged(&e.world, &e.emulation, m, s, &f)?,
                _ => f.scan,
            }))
        })
        .collect::<Result<_, CliError>>()?;
    Ok(out.into_iter().flatten().collect())
}

/// Training inputs under the scan-retention rule: only Top-K and the oracle
/// keep scans that contain real open objects.
pub fn build_training_inputs(manifest: &DatasetManifest, cfg: &HeadPipelineConfig) -> Result<(Vec<HeadInput<f64>>, InputLayout), CliError> {
    cfg.validate()?;
    let all = load_dataset(manifest)?;
    let layout = layout_for(&all, cfg, manifest.known_classes.len())?;
    let keep_open = cfg.mode == TrainMode::Oracle || cfg.forge.method.retains_open_scans();
    let scans: Vec<Scan<f64>> = all.into_iter().filter(|s| keep_open || !s.has_open_objects()).collect();
    let per_scan = |f: &(dyn Fn(&Scan<f64>) -> Result<Vec<HeadInput<f64>>, CliError> + Sync), scans: &[Scan<f64>]| {
        scans.par_iter().map(f).collect::<Result<Vec<_>, _>>().map(|v| v.into_iter().flatten().collect::<Vec<_>>())
    };
    let inputs = match (cfg.mode, cfg.forge.method) {
        (TrainMode::Oracle, _) => per_scan(&|s| matched_inputs(s, cfg, &layout), &scans)?,
        (TrainMode::Forged, ForgeMethod::TopK) => {
            let run = cfg.labelling();
            per_scan(&|s| Ok(forge_topk(s, &cfg.forge, &run, &cfg.probe, &layout)?), &scans)?
        }
        (TrainMode::Forged, ForgeMethod::GaussianNoise) => {
            let known = per_scan(&|s| matched_inputs(s, cfg, &layout), &scans)?;
            forge_gaussian(&known, layout.embedding_range(), &cfg.forge)
        }
        (TrainMode::Forged, _) => {
            if world_echo(manifest)?.is_none() {
                return Err(CliError::Config(format!(
                    "{} needs {WORLD_ECHO_FILE} next to the manifest to re-render forged scans",
                    cfg.forge.method.name()
                )));
            }
            let forged = forged_scans(manifest, &scans, cfg)?;
            per_scan(&|s| matched_inputs(s, cfg, &layout), &forged)?
        }
    };
    Ok((inputs, layout))
}

/// What `cmd_forge` produced.
#[derive(Debug, Clone, PartialEq)]
pub enum ForgeOutput {
    /// A forged dataset (scan-editing methods).
    Dataset(PathBuf),
    /// A JSONL file of labelled head inputs and its record count.
    Records(PathBuf, usize),
}

/// Runs the configured generator and writes its output under `out_dir`.
pub fn cmd_forge(manifest_path: &Path, cfg: &HeadPipelineConfig, out_dir: &Path) -> Result<ForgeOutput, CliError> {
    cfg.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    create_dir(out_dir)?;
    if cfg.mode == TrainMode::Forged && cfg.forge.method.edits_scans() {
        let scans: Vec<Scan<f64>> = load_dataset(&manifest)?.into_iter().filter(|s| !s.has_open_objects()).collect();
        let forged = forged_scans(&manifest, &scans, cfg)?;
        return Ok(ForgeOutput::Dataset(write_dataset(&manifest, &forged, out_dir)?));
    }
    let (inputs, _) = build_training_inputs(&manifest, cfg)?;
    let provenance = format!("{} seed {}", cfg.method_name(), cfg.forge.rng_seed);
    let records: Vec<TrainingRecord> = inputs.into_iter().map(|h| TrainingRecord { x: h.x, y: h.y, provenance: provenance.clone() }).collect();
    let path = out_dir.join("records.jsonl");
    write_records(&path, &records)?;
    Ok(ForgeOutput::Records(path, records.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub n_positive: usize,
    pub n_negative: usize,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub train_auroc: f64,
}

/// Builds head inputs, trains the head and saves it to `out_model`.
pub fn cmd_train_head(manifest_path: &Path, cfg: &HeadPipelineConfig, out_model: &Path) -> Result<TrainSummary, CliError> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let (inputs, layout) = build_training_inputs(&manifest, cfg)?;
    let (head, log) = train(&inputs, &cfg.train)?;
    let samples: Vec<ScoredSample<f64>> =
        inputs.iter().map(|h| head.forward(&h.x).map(|p| ScoredSample::new(p, h.y == 1))).collect::<Result<_, _>>()?;
    let train_auroc = auroc(&samples)?;
    let trained = TrainedHead {
        head,
        layout,
        probe: cfg.probe,
        train: cfg.train,
        provenance: format!("{} seed {}", cfg.method_name(), cfg.forge.rng_seed),
    };
    if let Some(dir) = out_model.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    trained.save(out_model)?;
    let n_positive = inputs.iter().filter(|h| h.y == 1).count();
    Ok(TrainSummary {
        model_path: out_model.to_path_buf(),
        n_positive,
        n_negative: inputs.len() - n_positive,
        final_loss: *log.epoch_losses.last().expect("at least one epoch"),
        epoch_losses: log.epoch_losses,
        train_auroc,
    })
}

fn evaluate_scored(scored: &[Scan<f64>], run: &RunConfig) -> Result<(HitRates, MetricReport), CliError> {
    let reports = match_scans(scored, run)?;
    let hits = hit_rates(&reports)?;
    let samples: Vec<ScoredSample<f64>> = reports.iter().flat_map(|r| r.scored_samples.iter().copied()).collect();
    Ok((hits, evaluate(&samples)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub row: ReportRow,
    pub csv_path: PathBuf,
    pub markdown_path: PathBuf,
}

/// Scores, matches and measures; writes `eval.csv` and `eval.md` to `out_dir`.
/// Input scans are never modified.
pub fn cmd_eval(manifest_path: &Path, run: &RunConfig, method: &EvalMethod, out_dir: &Path) -> Result<EvalOutcome, CliError> {
    run.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let scans = select_scans(&manifest, run.eval_subset)?;
    let scored = score_scans(&scans, method)?;
    let (hits, metrics) = evaluate_scored(&scored, run)?;
    let row = ReportRow {
        delta_thresh: run.delta_thresh,
        d_thresh: run.d_thresh,
        sort_mode: run.sort_mode,
        method: method.label(),
        hits,
        metrics,
    };
    let csv_path = out_dir.join("eval.csv");
    let markdown_path = out_dir.join("eval.md");
    write_text(&csv_path, &render_csv(std::slice::from_ref(&row)))?;
    write_text(&markdown_path, &render_markdown(&manifest.name, std::slice::from_ref(&row)))?;
    Ok(EvalOutcome { row, csv_path, markdown_path })
}

/// One row per grid cell × method, δ outermost; writes `sweep.csv` and `sweep.md`.
pub fn cmd_sweep(manifest_path: &Path, spec: &SweepSpec, base: &RunConfig, out_dir: &Path) -> Result<Vec<ReportRow>, CliError> {
    spec.validate()?;
    let manifest = DatasetManifest::load(manifest_path)?;
    let scans = select_scans(&manifest, base.eval_subset)?;
    let scored: Vec<Vec<Scan<f64>>> = spec.methods.iter().map(|m| score_scans(&scans, m)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for &delta_thresh in &spec.delta_thresh {
        for &d_thresh in &spec.d_thresh {
            for &sort_mode in &spec.sort_mode {
                let run = RunConfig { delta_thresh, d_thresh, sort_mode, ..*base };
                run.validate()?;
                for (method, s) in spec.methods.iter().zip(&scored) {
                    let (hits, metrics) = evaluate_scored(s, &run)?;
                    rows.push(ReportRow { delta_thresh, d_thresh, sort_mode, method: method.label(), hits, metrics });
                }
            }
        }
    }
    write_text(&out_dir.join("sweep.csv"), &render_csv(&rows))?;
    write_text(&out_dir.join("sweep.md"), &render_markdown(&manifest.name, &rows))?;
    Ok(rows)
}

/// Merges report CSVs into one markdown document.
pub fn cmd_report(csv_paths: &[PathBuf], out_md: &Path) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for p in csv_paths {
        let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
        rows.extend(parse_csv(&text)?);
    }
    let md = render_markdown("OOD evaluation report", &rows);
    write_text(out_md, &md)?;
    Ok(md)
}
