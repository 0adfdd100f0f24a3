use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "difface", version, about = "Blind restoration by diffused-estimator posterior sampling")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Root seed. Every stage derives its own stream from it; overrides the
    /// config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory holding run folders.
    #[arg(long, global = true, env = "DIFFACE_RUN_DIR", default_value = "runs")]
    pub run_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a paired HQ/LQ dataset from the synthetic world.
    GenData(GenData),
    /// Train the diffused estimator on a paired dataset.
    TrainEstimator(Train),
    /// Train the noise-prediction denoiser on the HQ half of a dataset.
    TrainDenoiser(Train),
    /// Restore one image under one or more seeds.
    Restore(Restore),
    /// Diffuse clean inputs to each N and reconstruct them.
    Probe(Probe),
    /// Restoration metrics and seed diversity over a grid of N.
    Sweep(Sweep),
    /// Cumulative alpha and kappa for every timestep, as CSV and PNG.
    Curves(Curves),
    /// Verify a run directory and summarize it.
    Report(Report),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    #[arg(long, value_enum, default_value = "train")]
    pub mode: Mode,
    /// Replace an existing dataset.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Train {
    /// Dataset directory (defaults to `paths.dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the configured number of optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct Models {
    /// Estimator checkpoint (defaults to `paths.estimator`).
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Denoiser checkpoint (defaults to `paths.denoiser`).
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Restore {
    /// Degraded PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Starting timestep (defaults to `sampler.start`).
    #[arg(long = "N", alias = "n")]
    pub n: Option<usize>,
    /// Comma-separated sampler seeds (defaults to `sampler.seeds`).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Clean reference; enables PSNR/SSIM in the manifest.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub models: Models,
}

#[derive(Debug, Args)]
pub struct Probe {
    /// Clean PNG or dataset directory (its HQ images). Ignored with `--oracle`.
    #[arg(long, required_unless_present = "oracle")]
    pub input: Option<PathBuf>,
    /// Comma-separated starting timesteps.
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    /// Use a two-component Gaussian mixture world with its exact denoiser.
    #[arg(long)]
    pub oracle: bool,
    /// Signals per N in oracle mode, or the cap on dataset images.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
    /// Denoiser checkpoint (defaults to `paths.denoiser`).
    #[arg(long)]
    pub denoiser: Option<PathBuf>,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Sweep {
    /// Evaluation dataset (defaults to `paths.dataset`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub grid: Vec<usize>,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many pairs.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Restorations per image for the diversity column.
    #[arg(long, default_value_t = 2)]
    pub diversity_seeds: usize,
    #[command(flatten)]
    pub models: Models,
}

#[derive(Debug, Args)]
pub struct Curves {
    /// Config whose `[schedule]` section defines the betas (defaults to `--config`).
    #[arg(long)]
    pub schedule_config: Option<PathBuf>,
    /// Output prefix; writes `<out>.csv` and `<out>.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Report {
    /// Run directory.
    #[arg(long)]
    pub run: PathBuf,
}
