use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Depth-guided factorized radiance fields from sparse RGB-D views.
#[derive(Debug, Parser)]
#[command(name = "vmfuse", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model to the training views of a dataset.
    Train(TrainArgs),
    /// Render a checkpoint from a list of camera poses.
    Render(RenderArgs),
    /// Render held-out views and score them against their images.
    Eval(EvalArgs),
    /// Ray-cast an analytic scene into an RGB-D dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory holding cameras.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat TOML file with training settings; defaults for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated training view indices.
    #[arg(long, value_delimiter = ',', required = true)]
    pub views: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write 0 in the wall_ms column so reruns give byte-identical logs.
    #[arg(long)]
    pub reproducible: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Camera list in the cameras.json record format.
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write 16-bit depth PNGs with a scale sidecar.
    #[arg(long)]
    pub depth: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "image")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub data: Option<PathBuf>,
    /// Comma-separated view indices to evaluate.
    #[arg(long, value_delimiter = ',', requires = "checkpoint")]
    pub views: Vec<usize>,
    /// Compare one PNG against `--reference` instead of rendering.
    #[arg(long, requires = "reference", conflicts_with = "checkpoint")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene JSON; the built-in toy scene when omitted.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Camera list JSON; the built-in toy rig when omitted.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of valid depth pixels replaced by uniform noise.
    #[arg(long, default_value_t = 0.0)]
    pub depth_noise: f64,
    /// Views that receive depth noise (all when omitted).
    #[arg(long, value_delimiter = ',')]
    pub noise_views: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length of the built-in rig's images.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}
