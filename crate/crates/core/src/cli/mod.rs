//! Command-line front end: argument parsing and dispatch to the library.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 runtime error.

mod commands;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::config::Preset;
use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mgf",
    version,
    about = "Multi-granularity self-supervised speech representations at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled corpus: WAVs, per-frame labels and a manifest
    Synth(SynthArgs),
    /// Pretrain an encoder; writes a checkpoint, a loss log and a loss chart
    Pretrain(PretrainArgs),
    /// Linear probes on frozen representations
    Probe(ProbeArgs),
    /// Accuracy against label fraction, fine-tuning pretrained vs from scratch
    Sweep(SweepArgs),
    /// Pretrain and probe the full model and its ablation variants
    Ablate(AblateArgs),
    /// Dump frame-level targets (and optionally representations) as CSV
    Features(FeaturesArgs),
    /// Print the mask plan for a crop
    Maskplan(MaskplanArgs),
    /// Finite-difference check of every primitive and the full loss
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory all outputs are written under
    #[arg(long, default_value = "mgf-out")]
    pub out: PathBuf,
    /// Log progress to stderr
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CommonOptionalOut {
    /// Seed for every random choice
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory to also write the report to
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Log progress to stderr
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Corpus directory or manifest.jsonl (default: synthetic 8 classes x 8 speakers x 8 utterances)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory of noise WAVs (default: seeded white noise)
    #[arg(long)]
    pub noise_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration overlaid on the preset
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset: desk or paper
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<Preset>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOverrides {
    /// Pretraining epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Utterances per step (>= 2)
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Linear warmup steps
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// Peak learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Loss weights as sample,frame,phoneme,sentence
    #[arg(long, value_delimiter = ',', value_name = "S,F,P,N")]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of frame classes
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Number of speakers
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    /// Utterances per speaker
    #[arg(long, default_value_t = 8)]
    pub utt: usize,
    /// Seconds per utterance
    #[arg(long, default_value_t = 3.0)]
    pub seconds: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Ablation variant: full, drop_sample, drop_frame, drop_phoneme, drop_sentence, generative_phoneme
    #[arg(long)]
    pub ablation: Option<String>,
    /// Continue from the checkpoint in --out
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to probe (default: a random encoder seeded by --seed)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// frame_class, speaker, one_shot_speaker or all
    #[arg(long, default_value = "all")]
    pub task: String,
    /// Share of labeled training data kept, in (0, 1]
    #[arg(long, default_value_t = 1.0)]
    pub label_fraction: f64,
    /// Probe training epochs
    #[arg(long)]
    pub probe_epochs: Option<usize>,
    /// Representation cache directory (default: <out>/cache)
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Pretrained checkpoint (default: a random encoder seeded by --seed)
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Label fractions, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    pub fractions: Vec<f64>,
    /// Seeds to repeat the sweep over (default: --seed)
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Fine-tuning epochs
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// Probe training epochs
    #[arg(long)]
    pub probe_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub train: TrainOverrides,
    /// Variants to run, comma separated (default: all six)
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Probe training epochs
    #[arg(long)]
    pub probe_epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Single WAV file instead of a corpus
    #[arg(long, conflicts_with = "data")]
    pub wav: Option<PathBuf>,
    /// Targets to dump: LPS-25, LPS-400, MFCC-25, MFCC-400 or all
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub kind: Vec<String>,
    /// Also dump encoder representations from this checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskplanArgs {
    #[command(flatten)]
    pub common: CommonOptionalOut,
    /// Crop length in 10 ms frames
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: CommonOptionalOut,
    /// Model size for the full-loss check: tiny or desk
    #[arg(long, default_value = "tiny")]
    pub scale: String,
    /// Coordinates sampled per parameter tensor
    #[arg(long, default_value_t = 6)]
    pub coords: usize,
    /// Pass threshold on the maximum relative error
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

fn parse_preset(s: &str) -> std::result::Result<Preset, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Exit code for a library error: 1 for bad input or configuration, 2 for
/// failures while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Config(_)
        | Error::UnknownKind(_)
        | Error::Stratification { .. }
        | Error::DegenerateSplit(_)
        | Error::TooFewSentences(_)
        | Error::EmptyCorpus
        | Error::LabelAlignment { .. }
        | Error::Utterance { .. } => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

/// Help text of the top-level command or of one subcommand.
pub fn help_text(subcommand: Option<&str>) -> Option<String> {
    let mut cmd = Cli::command();
    let target = match subcommand {
        None => &mut cmd,
        Some(name) => cmd.find_subcommand_mut(name)?,
    };
    Some(target.render_long_help().to_string())
}

/// Parses `args` (program name first) and runs the subcommand, writing
/// reports to `out` and diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = write!(err, "{text}");
                    EXIT_VALIDATION
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_VALIDATION
                }
            };
        }
    };
    init_logging(cli.command.verbose());
    match commands::dispatch(&cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// [`run_with`] on the process's stdout and stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (stdout, stderr) = (std::io::stdout(), std::io::stderr());
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

impl Command {
    fn verbose(&self) -> bool {
        match self {
            Command::Synth(a) => a.common.verbose,
            Command::Pretrain(a) => a.common.verbose,
            Command::Probe(a) => a.common.verbose,
            Command::Sweep(a) => a.common.verbose,
            Command::Ablate(a) => a.common.verbose,
            Command::Features(a) => a.common.verbose,
            Command::Maskplan(a) => a.common.verbose,
            Command::Gradcheck(a) => a.common.verbose,
        }
    }
}
