//! `fpm`: simulation, reconstruction, training and evaluation from the
//! command line. Every command reads an optional experiment file and lets
//! flags override it.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fpm", version, about = "Multiplexed Fourier ptychography toolkit")]
struct Cli {
    /// Experiment file (JSON, or TOML with a .toml extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the multiplexed stack of an object.
    Simulate(SimulateArgs),
    /// Composite one augmented target from the bar-chart source.
    Augment(AugmentArgs),
    /// Generate a synthetic dataset directory.
    MakeDataset(MakeDatasetArgs),
    /// Train the end-to-end network on a dataset.
    TrainE2e(TrainE2eArgs),
    /// Train a fusion network from the estimates of a (weak) end-to-end model.
    TrainFusion(TrainFusionArgs),
    /// Physics-based reconstruction of a stack.
    Reconstruct(ReconstructArgs),
    /// End-to-end, physics and fusion stages on one stack.
    Hybrid(HybridArgs),
    /// Train every model and score the five-method comparison.
    Ablate(AblateArgs),
    /// PSNR and SSIM of amplitude images.
    Metrics(MetricsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PhantomKind {
    Usaf,
    Textured,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Object as an FPMC file; a built-in phantom when absent.
    #[arg(long)]
    object: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "usaf")]
    phantom: PhantomKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Additive Gaussian noise, relative to unit intensity.
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the object used.
    #[arg(long)]
    object_out: Option<PathBuf>,
    /// Directory for per-pattern PNG previews.
    #[arg(long)]
    png_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct AugmentArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    png: Option<PathBuf>,
}

#[derive(Args)]
pub struct MakeDatasetArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct TrainE2eArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
    /// Where to store the model as it was after the Simple phase.
    #[arg(long)]
    snapshot: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ComboArg {
    DlDl,
    PmPm,
    DlPm,
}

#[derive(Args)]
pub struct TrainFusionArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// End-to-end model that produces the training estimates.
    #[arg(long)]
    e2e: PathBuf,
    #[arg(long, value_enum, default_value = "dl-pm")]
    combo: ComboArg,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum InitKind {
    Central,
    Prior,
}

#[derive(Args)]
pub struct ReconstructArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long, value_enum, default_value = "central")]
    init: InitKind,
    /// FPMC prior for `--init prior`.
    #[arg(long)]
    prior: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Ground truth for metrics in the summary.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct HybridArgs {
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    e2e: PathBuf,
    #[arg(long)]
    fusion: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    /// Existing dataset; generated from the configuration when absent.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MetricsArgs {
    /// Reference image (FPMC, FPMR or PNG).
    #[arg(long)]
    reference: PathBuf,
    #[arg(long = "test")]
    test: Vec<PathBuf>,
    /// Score `k × k` tiles instead of whole images.
    #[arg(long)]
    tiles: Option<usize>,
    /// Fraction of highest-contrast tiles kept.
    #[arg(long, default_value_t = 1.0)]
    keep: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::init_threads() {
        eprintln!("fpm: {e:#}");
        return ExitCode::from(2);
    }
    let name = cli.command.name();
    match commands::run(cli.config.as_deref(), cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fpm {name}: {e:#}");
            ExitCode::FAILURE
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Augment(_) => "augment",
            Command::MakeDataset(_) => "make-dataset",
            Command::TrainE2e(_) => "train-e2e",
            Command::TrainFusion(_) => "train-fusion",
            Command::Reconstruct(_) => "reconstruct",
            Command::Hybrid(_) => "hybrid",
            Command::Ablate(_) => "ablate",
            Command::Metrics(_) => "metrics",
        }
    }
}
