//! `voxaug` — deterministic volume augmentation and training pipeline.
//!
//! Every command that takes a seed (or a config with one) produces
//! byte-identical outputs on reruns, independent of `--workers`. Exit
//! codes are a stable scripting contract: 0 success, 1 partial or
//! runtime failure, 2 configuration error, 3 I/O error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;

#[derive(Parser)]
#[command(name = "voxaug", version, about = "Deterministic 3D augmentation and CNN training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// `--spec` values are JSON, e.g. `{"kind":"rotate","max_deg":7.5}`;
/// kinds: none, flip, rotate, scale, brightness, elastic, compose.
#[derive(Subcommand)]
enum Command {
    /// Apply one augmentation draw to a volume
    Augment(AugmentArgs),
    /// Generate a synthetic two-class dataset
    Synth(SynthArgs),
    /// Download volumes listed in a manifest
    Fetch(FetchArgs),
    /// Train one (augmentation, mode) arm across folds
    Train(TrainArgs),
    /// Combine arm summaries into one baseline-relative table
    Report(ReportArgs),
    /// Measure augmentation throughput and latency
    Bench(BenchArgs),
    /// Build a manifest from a phenotype CSV
    Manifest(ManifestArgs),
}

#[derive(Args)]
struct AugmentArgs {
    /// Input volume (.nii or .nii.gz)
    #[arg(long)]
    input: PathBuf,
    /// Output volume; a .gz suffix selects gzip
    #[arg(long)]
    output: PathBuf,
    /// Augmentation spec as JSON
    #[arg(long)]
    spec: String,
    /// Stream seed for the parameter draw
    #[arg(long)]
    seed: u64,
    /// Worker threads (0 or omitted: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory for volumes plus manifest.csv
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of subjects
    #[arg(long)]
    n: usize,
    /// Generation seed
    #[arg(long)]
    seed: u64,
    /// Volume shape as X,Y,Z
    #[arg(long, default_value = "16,20,16", value_parser = parse_shape)]
    shape: (usize, usize, usize),
    /// Class-signal strength in units of background standard deviation
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    /// Gaussian smoothing sigma in voxels
    #[arg(long, default_value_t = 0.75)]
    smoothness: f64,
    /// Positive-class fraction
    #[arg(long, default_value_t = 0.5)]
    balance: f64,
}

#[derive(Args)]
struct FetchArgs {
    /// Manifest CSV listing the wanted files
    #[arg(long)]
    manifest: PathBuf,
    /// Download destination
    #[arg(long)]
    out_dir: PathBuf,
    /// TOML file providing template/pipeline/strategy (flags override)
    #[arg(long)]
    config: Option<PathBuf>,
    /// URL template with {pipeline} {strategy} {derivative} {file_id}
    #[arg(long)]
    template: Option<String>,
    /// Pipeline name substituted into the template
    #[arg(long)]
    pipeline: Option<String>,
    /// Noise-removal strategy substituted into the template
    #[arg(long)]
    strategy: Option<String>,
    /// Re-download files that already exist
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment arm config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Worker threads, overriding the config (0: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory tree containing arm summary.csv files
    #[arg(long)]
    runs: PathBuf,
    /// Spec label deltas are measured against (per mode)
    #[arg(long)]
    baseline: String,
    /// Write the combined CSV here instead of standard output
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Augmentation spec as JSON
    #[arg(long)]
    spec: String,
    /// Volume to augment repeatedly
    #[arg(long)]
    input: PathBuf,
    /// Timed rounds per operator (after 3 warm-ups)
    #[arg(long, default_value_t = 10)]
    iterations: usize,
    /// Seed for the per-round parameter draws
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 or omitted: all cores)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct ManifestArgs {
    /// Phenotype CSV with id and diagnosis columns
    #[arg(long)]
    phenotype: PathBuf,
    /// Manifest CSV to write
    #[arg(long)]
    output: PathBuf,
    /// Subject-id column name
    #[arg(long, default_value = "SUB_ID")]
    id_column: String,
    /// Diagnosis-code column name (1 positive, 2 negative)
    #[arg(long, default_value = "DX_GROUP")]
    dx_column: String,
    /// Derivative name used in file names and URLs
    #[arg(long, default_value = "reho")]
    derivative: String,
}

fn parse_shape(text: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {text:?}"));
    }
    let mut dims = [0usize; 3];
    for (d, p) in dims.iter_mut().zip(&parts) {
        *d = p
            .trim()
            .parse()
            .map_err(|e| format!("bad dimension {p:?}: {e}"))?;
    }
    Ok((dims[0], dims[1], dims[2]))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Augment(a) => {
            commands::cmd_augment(&a.input, &a.output, &a.spec, a.seed, a.workers)
        }
        Command::Synth(a) => commands::cmd_synth(
            &a.out_dir,
            a.n,
            a.seed,
            a.shape,
            a.delta,
            a.smoothness,
            a.balance,
        ),
        Command::Fetch(a) => commands::cmd_fetch(
            &a.manifest,
            &a.out_dir,
            a.config.as_deref(),
            a.template,
            a.pipeline,
            a.strategy,
            a.overwrite,
        ),
        Command::Train(a) => commands::cmd_train(&a.config, a.workers),
        Command::Report(a) => commands::cmd_report(&a.runs, &a.baseline, a.output.as_deref()),
        Command::Bench(a) => commands::cmd_bench(&a.spec, &a.input, a.iterations, a.seed, a.workers),
        Command::Manifest(a) => commands::cmd_manifest(
            &a.phenotype,
            &a.output,
            &a.id_column,
            &a.dx_column,
            &a.derivative,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
