//! Command-line front end for the BeCoME-Net toolkit.
//!
//! Every subcommand writes into a fresh output directory: `config.json`
//! echoes the fully resolved settings, `run.log` records milestone lines
//! (no timestamps, so identical runs produce identical files), and the
//! command-specific artifacts sit next to them. All randomness derives
//! from one `--seed` through labeled streams, making every command
//! reproducible byte for byte.

use std::path::PathBuf;
use std::process::ExitCode;

use become_net::validity::{AoiRect, DEFAULT_ALPHA, DEFAULT_FACE_FRACTION};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod cmds;
mod support;

#[derive(Parser)]
#[command(
    name = "become-net",
    version,
    about = "Multi-task facial action unit detection with beta-guided correlation screening"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled face dataset.
    Synth(SynthArgs),
    /// Fit a model and write a checkpoint plus its training history.
    Train(TrainArgs),
    /// Subject-disjoint k-fold cross-validation with pooled metrics.
    Crossval(CrossvalArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Screen correlation edges between learned features, labels, and identity.
    Graph(GraphArgs),
    /// Export blendshape animation clips for the built-in expressions.
    Animate(AnimateArgs),
    /// Construct-validity report from gaze recordings and/or detection tables.
    Validity(ValidityArgs),
    /// Check full-model analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

/// Arguments shared by every subcommand.
#[derive(Args)]
struct OutArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = one per CPU core).
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

/// Which dataset layout a command expects or produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Variant {
    /// Full faces: square images with 68 landmarks.
    F,
    /// Half faces: left and right halves with 39 landmarks each.
    H,
}

impl Variant {
    fn as_str(self) -> &'static str {
        match self {
            Variant::F => "f",
            Variant::H => "h",
        }
    }
}

/// Training settings resolved as defaults < `--config` file < flags.
#[derive(Args)]
struct TrainFlags {
    /// JSON file with optional "network" and "train" override sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random stream of the run.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without validation improvement tolerated before stopping.
    #[arg(long)]
    patience: Option<usize>,
    /// Floor of the cyclical learning rate.
    #[arg(long)]
    lr_base: Option<f64>,
    /// Peak of the cyclical learning rate.
    #[arg(long)]
    lr_max: Option<f64>,
    /// Half-cycle length in iterations (default: 4x the batches per epoch).
    #[arg(long)]
    clr_stepsize: Option<usize>,
    /// Steepness of the soft edge-screening gate inside the loss.
    #[arg(long)]
    sharpness: Option<f64>,
    /// Family-wise significance level for edge screening.
    #[arg(long)]
    alpha: Option<f64>,
    /// Decision threshold on AU probabilities during evaluation.
    #[arg(long)]
    threshold: Option<f64>,
    /// Drop the expression branch (single-task ablation).
    #[arg(long)]
    no_multitask: bool,
    /// Drop the correlation regularizer from the loss (ablation).
    #[arg(long)]
    no_bgc: bool,
    /// Assert that the dataset has this layout before training.
    #[arg(long, value_enum)]
    variant: Option<Variant>,
    /// Dropout probability on the fused feature vector.
    #[arg(long)]
    dropout: Option<f64>,
    /// Width of each fully connected branch head.
    #[arg(long)]
    fc_units: Option<usize>,
    /// Channels of the landmark branch's pointwise convolution.
    #[arg(long)]
    landmark_channels: Option<usize>,
    /// Three comma-separated convolution channel counts, e.g. 8,16,32.
    #[arg(long, value_parser = parse_channels)]
    conv_channels: Option<Channels>,
}

/// Newtype so clap can carry a fixed-size channel triple.
#[derive(Clone, Copy, Debug)]
struct Channels([usize; 3]);

fn parse_channels(text: &str) -> Result<Channels, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated counts, got {text:?}"));
    }
    let mut out = [0usize; 3];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad channel count {part:?}: {e}"))?;
    }
    Ok(Channels(out))
}

fn parse_aoi(text: &str) -> Result<AoiRect, String> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected x0,y0,x1,y1 in [0,1], got {text:?}"));
    }
    let mut vals = [0.0f64; 4];
    for (slot, part) in vals.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad AOI coordinate {part:?}: {e}"))?;
    }
    AoiRect::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| e.to_string())
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    subjects: usize,
    #[arg(long, default_value_t = 40)]
    samples_per_subject: usize,
    /// Labeled AU columns (at most the 8 built-in deformations).
    #[arg(long, default_value_t = 8)]
    aus: usize,
    /// Expression classes (at most the 4 built-in combinations).
    #[arg(long, default_value_t = 4)]
    exprs: usize,
    /// Square image side length (even, at least 16).
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// F writes one full-face dataset; H splits every face into a left and
    /// a right half-face dataset.
    #[arg(long, value_enum, default_value_t = Variant::F)]
    variant: Variant,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest(s); multiple manifests (for example an AU-labeled
    /// set and an expression-labeled set) are merged into one sample pool.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct CrossvalArgs {
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Number of subject-disjoint folds.
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[command(flatten)]
    flags: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Decision threshold on AU probabilities.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GraphArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Family-wise significance level for edge screening.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Seed for the per-subject identity covariates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on the AU-labeled samples screened (0 = all).
    #[arg(long, default_value_t = 0)]
    max_samples: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct AnimateArgs {
    /// Expression names to export (repeatable); default is all built-ins.
    #[arg(long = "expression")]
    expressions: Vec<String>,
    /// JSON object renaming animation channels, e.g. {"AU12": "mouthSmile"}.
    #[arg(long)]
    remap: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ValidityArgs {
    /// CSV of binary detections with header participant_id,construct,detected.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Directory of per-participant gaze CSVs (timestamp_ms,x,y,on_screen).
    #[arg(long)]
    gaze_dir: Option<PathBuf>,
    /// Face area of interest as x0,y0,x1,y1 in unit scene coordinates.
    #[arg(long, value_parser = parse_aoi)]
    aoi: Option<AoiRect>,
    /// Scene fraction the face occupies under the no-preference null.
    #[arg(long, default_value_t = DEFAULT_FACE_FRACTION)]
    face_fraction: f64,
    /// Significance level for the validity verdicts.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image side length of the reduced model.
    #[arg(long, default_value_t = 16)]
    size: usize,
    /// Landmark count of the reduced model.
    #[arg(long, default_value_t = 8)]
    landmarks: usize,
    #[arg(long, default_value_t = 3)]
    aus: usize,
    #[arg(long, default_value_t = 3)]
    exprs: usize,
    /// Samples per task batch in the probed objective.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Parameter coordinates probed with central differences.
    #[arg(long, default_value_t = 60)]
    probes: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    /// Maximum tolerated relative error; exceeding it fails the command.
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[command(flatten)]
    out: OutArgs,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(args) => cmds::synth(args),
        Command::Train(args) => cmds::train(args),
        Command::Crossval(args) => cmds::crossval(args),
        Command::Eval(args) => cmds::eval(args),
        Command::Graph(args) => cmds::graph(args),
        Command::Animate(args) => cmds::animate(args),
        Command::Validity(args) => cmds::validity(args),
        Command::Gradcheck(args) => cmds::gradcheck(args),
    }
}
