use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use overica_cli::commands::{self, BenchConfig, CifarEstimateConfig, CifarPatchesConfig, EstimateConfig, EvalConfig, PhaseConfig, SampleConfig};
use overica_cli::config::{load_file, resolve, EstimatorArgs};
use overica_cli::error::{CliError, EXIT_OK};

/// Overcomplete ICA: sampling, estimation, phase grids, benchmarks and
/// CIFAR-10 patch experiments.
#[derive(Parser)]
#[command(name = "oica", version)]
struct Cli {
    /// TOML config; keys match flag names with underscores
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (also capped by OICA_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log level: error, warn, info, debug
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a mixing matrix and samples
    Sample(SampleArgs),
    /// Estimate a mixing matrix from samples
    Estimate(EstimateArgs),
    /// Exact-recovery phase transition grid
    Phase(PhaseArgs),
    /// Timing and error sweeps over n or k
    Bench(BenchArgs),
    /// Extract 7×7 grayscale patches from a CIFAR-10 binary batch
    CifarPatches(CifarPatchesArgs),
    /// Estimate components of CIFAR-10 patches
    CifarEstimate(CifarEstimateArgs),
    /// Compare an estimate with the true mixing matrix
    Eval(EvalArgs),
}

#[derive(clap::Args, Serialize)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Serialize)]
struct SampleArgs {
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// uniform, laplace or gaussian
    #[arg(long)]
    source: Option<String>,
    /// normal, prune or sparse
    #[arg(long)]
    mode: Option<String>,
    /// Prune-mode coherence cap (default: calibrated mean coherence)
    #[arg(long)]
    coherence_cap: Option<f64>,
    /// oica or csv
    #[arg(long)]
    format: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct EstimateArgs {
    /// Sample matrix file (.oica or .csv)
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// True mixing matrix, for metrics
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Use the exact span of the true atoms (needs --truth)
    #[arg(long)]
    population: Option<bool>,
    #[arg(long)]
    recovery_angle_deg: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct PhaseArgs {
    #[arg(long, value_delimiter = ',')]
    p_values: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long)]
    n_rep: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct BenchArgs {
    /// n or k
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<usize>>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    recovery_angle_deg: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct CifarPatchesArgs {
    /// CIFAR-10 binary batch (e.g. data_batch_1.bin)
    #[arg(long)]
    input: Option<PathBuf>,
    /// luma or mean
    #[arg(long)]
    gray: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct CifarEstimateArgs {
    /// Patch file written by cifar-patches
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    mosaic_columns: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

#[derive(clap::Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    estimate: Option<PathBuf>,
    #[arg(long)]
    recovery_angle_deg: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    common: Common,
}

fn thread_cap(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    let env = match std::env::var("OICA_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&t| t > 0)
                .ok_or_else(|| CliError::Input(format!("OICA_THREADS must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if flag == Some(0) {
        return Err(CliError::Input("--threads must be at least 1".into()));
    }
    Ok(match (flag, env) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    })
}

#[cfg(feature = "parallel")]
fn init_threads(cap: Option<usize>) -> Result<(), CliError> {
    if let Some(t) = cap {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(anyhow::Error::from)?;
    }
    Ok(())
}

#[cfg(not(feature = "parallel"))]
fn init_threads(_cap: Option<usize>) -> Result<(), CliError> {
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(thread_cap(cli.threads)?)?;
    let file = load_file(cli.config.as_deref())?;
    let file = file.as_ref();
    let manifest = match &cli.command {
        Command::Sample(a) => commands::sample(&resolve::<SampleConfig>("sample", file, a)?)?,
        Command::Estimate(a) => commands::estimate(&resolve::<EstimateConfig>("estimate", file, a)?)?,
        Command::Phase(a) => commands::phase(&resolve::<PhaseConfig>("phase", file, a)?)?,
        Command::Bench(a) => commands::bench(&resolve::<BenchConfig>("bench", file, a)?)?,
        Command::CifarPatches(a) => {
            commands::cifar_patches(&resolve::<CifarPatchesConfig>("cifar-patches", file, a)?)?
        }
        Command::CifarEstimate(a) => {
            commands::cifar_estimate(&resolve::<CifarEstimateConfig>("cifar-estimate", file, a)?)?
        }
        Command::Eval(a) => {
            let (manifest, metrics) = commands::eval(&resolve::<EvalConfig>("eval", file, a)?)?;
            println!("{}", serde_json::to_string_pretty(&metrics).map_err(anyhow::Error::from)?);
            manifest
        }
    };
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::from(EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
