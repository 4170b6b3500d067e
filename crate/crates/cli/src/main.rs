use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ood3d::io::{EvalSubset, RunConfig};
use ood3d_cli::{
    cmd_eval, cmd_forge, cmd_report, cmd_score, cmd_sweep, cmd_synth, cmd_train_head, CliError, EvalMethod, ForgeOutput,
    HeadPipelineConfig, SweepSpec,
};

/// Open-set evaluation pipeline for LiDAR 3D detectors.
///
/// Worker threads are capped by the OOD3D_THREADS environment variable.
#[derive(Parser)]
#[command(name = "ood3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (scans, manifest.json, world.json).
    Synth {
        /// World config JSON; defaults to the built-in world.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Produce pseudo-unknowns: a forged dataset or a JSONL record file.
    Forge {
        #[arg(long)]
        manifest: PathBuf,
        /// Pipeline config JSON (forge, probe, train sections).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// gaussian | mesh | pointmixup | resize | topk | oracle
        #[arg(long = "forge-method")]
        forge_method: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Annotate every detection with an OOD score.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        /// default | maxlogit | msp | energy | odin | mcdropout | head:<model.json>
        #[arg(long)]
        scorer: String,
        /// Softmax temperature override.
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the two-stage head.
    TrainHead {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output model file (JSON plus a weights blob beside it).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "forge-method")]
        forge_method: Option<String>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Match, score and report one configuration.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Run config (key = value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scorer: Option<String>,
        #[arg(long)]
        subset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for eval.csv and eval.md.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a grid of thresholds and methods.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Sweep spec JSON.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        subset: Option<String>,
        /// Output directory for sweep.csv and sweep.md.
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge report CSVs into a markdown table.
    Report {
        /// Input CSV files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn pipeline(config: Option<PathBuf>, seed: Option<u64>, method: Option<String>, k: Option<usize>) -> Result<HeadPipelineConfig, CliError> {
    let mut cfg = match config {
        Some(p) => HeadPipelineConfig::load(&p)?,
        None => HeadPipelineConfig::default(),
    };
    if let Some(m) = method {
        cfg.set_method(&m)?;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(k) = k {
        cfg.forge.topk_k = k;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_config(config: Option<PathBuf>, subset: Option<String>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut run = match config {
        Some(p) => RunConfig::load(&p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = subset {
        run.eval_subset = EvalSubset::parse(&s).ok_or_else(|| CliError::Config(format!("unknown subset {s:?}")))?;
    }
    if let Some(s) = seed {
        run.rng_seed = s;
    }
    run.validate()?;
    Ok(run)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config, out, seed } => {
            let m = cmd_synth(config.as_deref(), &out, seed)?;
            println!("{}", m.display());
        }
        Command::Forge { manifest, config, out, seed, forge_method, k } => {
            let cfg = pipeline(config, seed, forge_method, k)?;
            match cmd_forge(&manifest, &cfg, &out)? {
                ForgeOutput::Dataset(p) => println!("{}", p.display()),
                ForgeOutput::Records(p, n) => println!("{} ({n} records)", p.display()),
            }
        }
        Command::Score { manifest, scorer, temperature, out } => {
            let mut method = EvalMethod::parse(&scorer)?;
            if let (Some(t), EvalMethod::Scorer(c)) = (temperature, &mut method) {
                c.temperature = t;
            }
            let m = cmd_score(&manifest, &method, &out)?;
            println!("{}", m.display());
        }
        Command::TrainHead { manifest, config, out, seed, forge_method, k } => {
            let cfg = pipeline(config, seed, forge_method, k)?;
            let s = cmd_train_head(&manifest, &cfg, &out)?;
            println!(
                "trained {} head on {} positives / {} negatives; train AUROC {:.4}",
                cfg.method_name(),
                s.n_positive,
                s.n_negative,
                s.train_auroc
            );
            println!("final training loss {:.6}", s.final_loss);
        }
        Command::Eval { manifest, config, scorer, subset, seed, out } => {
            let mut run = run_config(config, subset, seed)?;
            let method = match scorer {
                Some(s) => EvalMethod::parse(&s)?,
                None => EvalMethod::Scorer(run.scorer),
            };
            if let EvalMethod::Scorer(c) = &method {
                run.scorer = *c;
            }
            let o = cmd_eval(&manifest, &run, &method, &out)?;
            print!("{}", std::fs::read_to_string(&o.markdown_path).map_err(|e| CliError::Io(e.to_string()))?);
        }
        Command::Sweep { manifest, grid, config, subset, out } => {
            let base = run_config(config, subset, None)?;
            let spec = SweepSpec::load(&grid)?;
            let rows = cmd_sweep(&manifest, &spec, &base, &out)?;
            println!("{} rows written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Report { inputs, out } => {
            print!("{}", cmd_report(&inputs, &out)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("OOD3D_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // a second initialization only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ood3d: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
