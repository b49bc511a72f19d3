mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cenc_core::MaskKind;
use cenc_core::LossMode;

#[derive(Debug, Parser)]
#[command(name = "cenc", version, about = "Context-encoder image inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a generator (and discriminator) on a directory of images.
    Train(TrainArgs),
    /// Fill the masked region of one image with a trained generator.
    Inpaint(InpaintArgs),
    /// Report L1 / L2 / PSNR on the held-out split.
    Eval(EvalArgs),
    /// Rank dataset images by context-feature distance to a query.
    Nn(NnArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a procedurally generated dataset.
    SynthData(SynthArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskArg {
    Central,
    Block,
    Region,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::Central => MaskKind::Central,
            MaskArg::Block => MaskKind::RandomBlock,
            MaskArg::Region => MaskKind::RandomRegion,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LossArg {
    L2,
    Joint,
}

impl From<LossArg> for LossMode {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::L2 => LossMode::L2Only,
            LossArg::Joint => LossMode::Joint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Rec,
    NnOurs,
    NnHog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Args)]
struct MaskFlags {
    /// Mask family.
    #[arg(long, value_enum)]
    mask: Option<MaskArg>,
    /// Side of the central prediction window.
    #[arg(long)]
    patch: Option<usize>,
    /// Rim of the central window that overlaps the context.
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML file with flat configuration keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of PPM/PGM/PNG images.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints, log and resolved config.
    #[arg(long)]
    out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskFlags,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
}

#[derive(Debug, Args)]
struct InpaintArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Composite output (.png or .ppm); raw prediction and mask go alongside.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskFlags,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "rec")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Also write report.txt and report.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    mask: MaskFlags,
}

#[derive(Debug, Args)]
struct NnArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "nn-ours")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    #[command(flatten)]
    mask: MaskFlags,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    count: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<commands::GradcheckFailed>().is_some() {
        return EXIT_NUMERIC;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<cenc_core::Error>() {
            if e.is_numeric() {
                return EXIT_NUMERIC;
            }
            if e.is_data() {
                return EXIT_DATA;
            }
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    EXIT_USAGE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Inpaint(a) => commands::inpaint(a),
        Command::Eval(a) => commands::eval(a),
        Command::Nn(a) => commands::nn(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::SynthData(a) => commands::synth_data(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
