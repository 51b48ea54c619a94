//! Batch front end for the purification pipeline. Every subcommand is
//! idempotent given the same config and seeds, and artifacts live under the
//! output directory so partial reruns are cheap.

use clap::{Parser, Subcommand};
use pmu_purify_core::attacks::AttackKind;
use pmu_purify_core::config::RunConfig;
use pmu_purify_core::error::Error;
use pmu_purify_core::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pmu-purify",
    about = "Diffusion-based adversarial purification for PMU event classification",
    version
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; all artifact paths are relative to it.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed override (also honours PMU_PURIFY_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the harness pool (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic event dataset with splits and stats.
    GenData,
    /// Train the event classifier on the dataset.
    TrainClassifier,
    /// Train the diffusion noise estimator on clean training data.
    TrainDiffusion,
    /// Attack the test split (all configured attacks, or one).
    Attack {
        #[arg(long)]
        attack: Option<String>,
    },
    /// Purify one source ("original" or an attack name) with one purifier.
    Purify {
        #[arg(long)]
        purifier: String,
        #[arg(long, default_value = "original")]
        attack: String,
    },
    /// Run the purifier x attack macro-F1 grid.
    EvalGrid,
    /// Trace the clean/attacked L2 distance through purification.
    L2Trace {
        #[arg(long)]
        attack: Option<String>,
    },
    /// Latency benchmark across PMU counts.
    Bench,
    /// Run the self-contained invariant suite at micro scale.
    Verify,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {err}", err.class());
            match err {
                Error::Config(_) | Error::Usage(_) => ExitCode::from(2),
                Error::MissingArtifact(_) => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(cli: Cli) -> pmu_purify_core::Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::desk(),
    };
    if let Ok(env_seed) = std::env::var("PMU_PURIFY_SEED") {
        cfg.seeds.master = env_seed
            .parse()
            .map_err(|_| Error::config(format!("PMU_PURIFY_SEED {env_seed:?} is not a u64")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seeds.master = seed;
    }
    cfg.validate()?;
    let out = &cli.out;

    match cli.command {
        Command::GenData => {
            let dir = pipeline::gen_data(&cfg, out)?;
            println!("dataset written to {}", dir.display());
        }
        Command::TrainClassifier => {
            let dir = pipeline::train_classifier_stage(&cfg, out)?;
            println!("classifier checkpoint written to {}", dir.display());
        }
        Command::TrainDiffusion => {
            let dir = pipeline::train_diffusion_stage(&cfg, out)?;
            println!("noise estimator checkpoint written to {}", dir.display());
        }
        Command::Attack { attack } => {
            let kinds = match attack {
                Some(name) => vec![AttackKind::from_name(&name)?],
                None => cfg.attack_kinds(),
            };
            let dirs = pipeline::attack_stage(&cfg, out, &kinds)?;
            for dir in dirs {
                println!("attacked dataset written to {}", dir.display());
            }
        }
        Command::Purify { purifier, attack } => {
            let dir = pipeline::purify_stage(&cfg, out, &purifier, &attack)?;
            println!("purified dataset written to {}", dir.display());
        }
        Command::EvalGrid => {
            let report = pipeline::eval_grid_stage(&cfg, out)?;
            let rows = report.f1_grid.as_ref().map(|g| g.len()).unwrap_or(0);
            println!(
                "f1 grid with {rows} cells written to {}",
                pipeline::eval_dir(&cfg, out).display()
            );
        }
        Command::L2Trace { attack } => {
            let kind = attack.as_deref().map(AttackKind::from_name).transpose()?;
            let report = pipeline::l2_trace_stage(&cfg, out, kind)?;
            if let Some(trace) = &report.l2_trace {
                println!(
                    "l2 trace for {} with {} steps written to {}",
                    trace.attack,
                    trace.steps.len(),
                    pipeline::eval_dir(&cfg, out).display()
                );
            }
        }
        Command::Bench => {
            let report = pipeline::bench_stage(&cfg, out)?;
            let rows = report.latency.as_ref().map(|t| t.rows.len()).unwrap_or(0);
            println!(
                "latency table with {rows} rows written to {}",
                pipeline::eval_dir(&cfg, out).display()
            );
        }
        Command::Verify => {
            let all_passed = pmu_purify_core::verify::run_verify(out)?;
            if !all_passed {
                return Err(Error::usage("one or more verify checks failed"));
            }
            println!("all verify checks passed");
        }
    }
    Ok(())
}
