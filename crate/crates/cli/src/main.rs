use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sample_core::harness::{self, ConfigError, ExperimentSpec, HarnessError};
use sample_core::{DynamicsError, ReferenceError, RunResult};

/// Langevin sampling studies: convergence orders, friction sweeps,
/// references and perturbation-theory checks.
#[derive(Parser)]
#[command(name = "sample", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (method, stepsize, gamma) cell and write results.csv.
    Run(Common),
    /// Like `run`, plus per-method log-log slopes in slopes.csv.
    Convergence(Common),
    /// Errors at sample-count checkpoints across gamma values (gamma_sweep.csv).
    GammaSweep(Common),
    /// Write the reference distribution the study is scored against.
    Reference(Common),
    /// Per-bin empirical vs predicted bias for BAOAB/ABOBA (theory_check.csv).
    TheoryCheck(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; defaults to SAMPLE_WORKERS or all cores.
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides the seed from the config file.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

struct Setup {
    spec: ExperimentSpec,
    out: PathBuf,
    workers: usize,
}

fn load(common: &Common) -> anyhow::Result<Setup> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|source| HarnessError::Io {
            path: common.config.clone(),
            source,
        })
        .context("reading config")?;
    let mut spec = ExperimentSpec::parse(&text).with_context(|| format!("parsing {}", common.config.display()))?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let setup = Setup {
        spec,
        out: common.out.clone(),
        workers: harness::worker_count(common.workers),
    };
    write(&setup.out.join("spec.txt"), &setup.spec.to_config_text())?;
    Ok(setup)
}

fn reference(setup: &Setup) -> anyhow::Result<sample_core::ReferenceDistribution> {
    let cache = setup.out.join("reference-cache");
    harness::build_reference(&setup.spec, Some(&cache), setup.workers).context("building reference")
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    harness::write_text(path, text)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn diverged_status(rows: &[RunResult]) -> ExitCode {
    if !rows.is_empty() && rows.iter().all(|r| r.diverged) {
        eprintln!("every cell diverged");
        ExitCode::from(EXIT_DIVERGED)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run(c) => {
            let setup = load(&c)?;
            let reference = reference(&setup)?;
            let rows = harness::run_study(&setup.spec, &reference, setup.workers)?;
            write(&setup.out.join("results.csv"), &harness::csv_string(&rows))?;
            Ok(diverged_status(&rows))
        }
        Command::Convergence(c) => {
            let setup = load(&c)?;
            let reference = reference(&setup)?;
            let study = harness::convergence_study(&setup.spec, &reference, setup.workers)?;
            write(&setup.out.join("convergence.csv"), &harness::csv_string(&study.rows))?;
            write(&setup.out.join("slopes.csv"), &harness::slopes_csv_string(&study.slopes))?;
            for s in &study.slopes {
                match s.fit {
                    Some(f) => println!("{} gamma={} slope={:.3}", s.method, s.gamma, f.slope),
                    None => println!("{} gamma={} slope=NA", s.method, s.gamma),
                }
            }
            Ok(diverged_status(&study.rows))
        }
        Command::GammaSweep(c) => {
            let setup = load(&c)?;
            let reference = reference(&setup)?;
            let rows = harness::gamma_sweep(&setup.spec, &reference, setup.workers)?;
            write(&setup.out.join("gamma_sweep.csv"), &harness::sweep_csv_string(&rows))?;
            Ok(diverged_status(&rows))
        }
        Command::Reference(c) => {
            let setup = load(&c)?;
            let reference = reference(&setup)?;
            write(&setup.out.join("reference.txt"), &reference.to_text())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::TheoryCheck(c) => {
            let setup = load(&c)?;
            let reference = reference(&setup)?;
            let rows = harness::theory_check(&setup.spec, &reference, setup.workers)?;
            write(&setup.out.join("theory_check.csv"), &harness::theory_csv_string(&rows))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<DynamicsError>() {
            return EXIT_CONFIG;
        }
        if let Some(h) = cause.downcast_ref::<HarnessError>() {
            match h {
                HarnessError::Io { .. } => return EXIT_IO,
                HarnessError::Config(_) | HarnessError::MissingReferenceStep | HarnessError::Unsupported(_) => {
                    return EXIT_CONFIG
                }
                _ => {}
            }
        }
        if let Some(r) = cause.downcast_ref::<ReferenceError>() {
            match r {
                ReferenceError::Io { .. } | ReferenceError::Cache { .. } => return EXIT_IO,
                ReferenceError::InvalidParameter { .. } | ReferenceError::StepTooLarge { .. } => {
                    return EXIT_CONFIG
                }
                _ => {}
            }
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
