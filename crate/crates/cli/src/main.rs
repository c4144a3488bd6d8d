use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use llmpanel_core::exposure::ExposureVariant;
use llmpanel_core::simlab::Estimator;
use llmpanel_core::TimeIndex;

mod commands;
mod manifest;

/// Occupation panel treatment-effect estimation.
#[derive(Debug, Parser)]
#[command(name = "llmpanel", version)]
struct Cli {
    /// Directory for outputs and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Worker thread cap; falls back to LLMPANEL_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate micro records into occupation-month panels.
    Ingest(IngestArgs),
    /// Score occupations and write a median-split treatment file.
    Exposure(ExposureArgs),
    /// Binary and continuous two-way fixed-effects DiD.
    Did(DidArgs),
    /// Event-study coefficients relative to onset.
    EventStudy(EventStudyArgs),
    /// Per-unit synthetic DiD with bootstrap standard error.
    Sdid(SdidArgs),
    /// Monte Carlo comparison on simulated factor-model panels.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    micro: PathBuf,
    /// Price index CSV; earnings panel is skipped without it.
    #[arg(long)]
    deflator: Option<PathBuf>,
    #[arg(long, default_value = "2024-04")]
    topcode_cutover: TimeIndex,
    #[arg(long, default_value_t = 2884.0)]
    topcode_threshold: f64,
}

#[derive(Debug, Args)]
struct ExposureArgs {
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long, default_value = "overall")]
    variant: ExposureVariant,
    /// Panel to summarize by exposure quartile.
    #[arg(long)]
    panel: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PanelArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long, default_value = "2022-12")]
    onset: TimeIndex,
    /// Give every cell equal weight instead of weighting by n_obs.
    #[arg(long)]
    unweighted: bool,
}

#[derive(Debug, Args)]
struct DidArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    treatment: Option<PathBuf>,
    /// Exposure scores CSV for the continuous specification.
    #[arg(long)]
    exposure: Option<PathBuf>,
    #[arg(long, default_value = "overall")]
    variant: ExposureVariant,
}

#[derive(Debug, Args)]
struct EventStudyArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    treatment: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BootstrapArg {
    Unit,
    Refit,
}

#[derive(Debug, Args)]
struct SdidArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    treatment: PathBuf,
    #[arg(long, default_value = "2022-12")]
    onset: TimeIndex,
    #[arg(long, default_value_t = 1000)]
    nboot: usize,
    #[arg(long, default_value_t = 20221130)]
    seed: u64,
    #[arg(long, value_enum, default_value = "unit")]
    bootstrap: BootstrapArg,
    /// Ridge penalty on the unit-weight program.
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// Add a free intercept to both weight programs.
    #[arg(long)]
    intercept: bool,
    /// Bins in the effect histogram.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// key=value file of data-generating settings.
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "did,sdid")]
    estimators: Vec<Estimator>,
    #[arg(long, default_value_t = 200)]
    nboot: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<llmpanel_core::Error>())
        .map_or(1, |e| if e.is_estimation() { 2 } else { 1 })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
