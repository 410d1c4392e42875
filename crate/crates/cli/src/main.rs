mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::BoundsChoice;

/// Kinetic modeling toolkit for dynamic whole-body PET.
#[derive(Debug, Parser)]
#[command(name = "pbpk", version, about)]
struct Cli {
    /// Worker threads for voxel-parallel work (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset with known parameters.
    Simulate(SimulateArgs),
    /// Print the model TAC for one parameter set as a curve CSV.
    Tacgen(TacgenArgs),
    /// Fit the two-tissue model voxel-wise or to a region's mean TAC.
    Fit(FitArgs),
    /// Patlak graphical analysis, voxel-wise or on a region's mean TAC.
    Patlak(PatlakArgs),
    /// Organ statistics, TAC fidelity and parameter errors of a fit.
    Eval(EvalArgs),
    /// Write forward-model fixtures for cross-implementation checks.
    ExportFixtures(ExportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// TOML config with [phantom], [input] and [schedule] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Noise seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("which").required(true).args(["organ", "params"])))]
struct TacgenArgs {
    /// Organ preset (liver, lungs, kidneys, spleen, bones, aorta, heart).
    #[arg(long)]
    organ: Option<String>,
    /// Explicit parameters as K1,k2,k3,VB.
    #[arg(long, value_parser = parse_params, allow_hyphen_values = true)]
    params: Option<[f64; 4]>,
    /// Input function curve CSV; defaults to the configured input model.
    #[arg(long)]
    idif: Option<PathBuf>,
    /// TOML config ([input], [schedule]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Internal integration grid spacing in seconds.
    #[arg(long)]
    fine_step_s: Option<f64>,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Fit the mean TAC of this label (id or organ name) instead of voxels.
    #[arg(long)]
    voi: Option<String>,
    #[arg(long, value_enum, default_value_t = BoundsChoice::Paper)]
    bounds: BoundsChoice,
    /// Fit every voxel, ignoring the label map.
    #[arg(long)]
    all_voxels: bool,
    /// Input function curve CSV; defaults to the dataset's idif.csv.
    #[arg(long)]
    idif: Option<PathBuf>,
    /// TOML config ([fit]).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    fine_step_s: Option<f64>,
    /// Output path: a volume for voxel fits (default <dataset>/fit.json),
    /// a CSV file for region fits (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PatlakArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    voi: Option<String>,
    /// Start of the linear phase in minutes.
    #[arg(long, default_value_t = 20.0)]
    t_star_min: f64,
    #[arg(long)]
    all_voxels: bool,
    #[arg(long)]
    idif: Option<PathBuf>,
    /// Output path: a volume (default <dataset>/patlak.json), or a CSV file
    /// for region fits (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReferenceChoice {
    /// VoI means of voxel-wise network estimates.
    Network,
    /// Curve fits of VoI-averaged TACs.
    CurveFit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PoolingChoice {
    VoxelMean,
    Pooled,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Parametric volume to evaluate (default <dataset>/fit.json).
    #[arg(long)]
    fit: Option<PathBuf>,
    /// True parameters (default <dataset>/truth.json when present).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    idif: Option<PathBuf>,
    /// Report directory (default <dataset>/eval).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Largest relative difference from the reference table counted as
    /// agreement.
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = ReferenceChoice::Network)]
    reference: ReferenceChoice,
    /// How voxel TACs of a slice are combined into one cosine similarity.
    #[arg(long, value_enum, default_value_t = PoolingChoice::VoxelMean)]
    pooling: PoolingChoice,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    out: PathBuf,
    /// Random parameter draws added to the organ presets.
    #[arg(long, default_value_t = 16)]
    random: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML config ([input], [schedule]).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_params(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected 4 comma-separated values K1,k2,k3,VB, got {}", v.len()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Tacgen(a) => commands::tacgen(a),
        Command::Fit(a) => commands::fit(a),
        Command::Patlak(a) => commands::patlak(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportFixtures(a) => commands::export_fixtures(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
