//! Argument parsing and dispatch. All real work lives in the library
//! modules; this file translates flags into configs and errors into the
//! documented exit codes (0 ok, 1 usage, 2 data, 3 numeric).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wdmir_cli::ablate::cmd_ablate;
use wdmir_cli::checkpoint::Checkpoint;
use wdmir_cli::config::{ModalityArg, Overrides, RunConfig, SynthSection};
use wdmir_cli::evalcmd::{cmd_evaluate, cmd_predict};
use wdmir_cli::trainer::cmd_train;
use wdmir_cli::wavelet_cmd::{cmd_wavelet, format_band};
use wdmir_cli::{CliError, Result};
use wdmir_core::data::{write_dataset, Split};

#[derive(Parser)]
#[command(
    name = "wdmir",
    version,
    about = "Wavelet-driven multimodal intent recognition"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write last/best checkpoints plus an epoch log
    Train(RunArgs),
    /// Score a checkpoint on one dataset split
    Evaluate(EvalArgs),
    /// Run a single record through a checkpoint
    Predict(PredictArgs),
    /// Train each architectural ablation on one seed and compare
    Ablate(RunArgs),
    /// Generate a synthetic dataset on disk
    Synth(SynthArgs),
    /// Split a stored feature sequence into wavelet bands
    Wavelet(WaveletArgs),
}

fn parse_modality(s: &str) -> std::result::Result<ModalityArg, String> {
    ModalityArg::parse(s).ok_or_else(|| format!("'{s}' is not one of none, text, video, audio"))
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    Split::parse(s).ok_or_else(|| format!("'{s}' is not one of train, val, test"))
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; individual flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset manifest path
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Video/audio length after temporal alignment
    #[arg(long)]
    aligned_len: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    /// Hidden width of the raw-modality summary LSTMs
    #[arg(long)]
    hidden: Option<usize>,
    /// Wavelet decomposition depth
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    crm_projections: Option<bool>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Global gradient-norm ceiling
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_batch: Option<usize>,
    #[arg(long)]
    eval_batch: Option<usize>,
    /// Stop after this many epochs without validation improvement
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Bypass the wavelet fusion stage (aligned features go straight on)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    disable_wfm: Option<bool>,
    /// Zero the raw-modality LSTM summary slots
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    drop_flv_fla: Option<bool>,
    /// Zero the enhanced bimodal feature slots
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    drop_fvat_favt: Option<bool>,
    /// Zero the trimodal feature slot
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    drop_ftva: Option<bool>,
    /// Blank one modality's input features
    #[arg(long, value_parser = parse_modality)]
    drop_modality: Option<ModalityArg>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Checkpoint to resume from (train) or load (evaluate/predict)
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            dataset: self.dataset.clone(),
            aligned_len: self.aligned_len,
            d_model: self.d_model,
            hidden: self.hidden,
            levels: self.levels,
            dropout: self.dropout,
            crm_projections: self.crm_projections,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            clip_norm: self.clip_norm,
            epochs: self.epochs,
            train_batch: self.train_batch,
            eval_batch: self.eval_batch,
            patience: self.patience,
            seed: self.seed,
            disable_wfm: self.disable_wfm,
            drop_flv_fla: self.drop_flv_fla,
            drop_fvat_favt: self.drop_fvat_favt,
            drop_ftva: self.drop_ftva,
            drop_modality: self.drop_modality,
            out_dir: self.out_dir.clone(),
            checkpoint: self.checkpoint.clone(),
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Which split to score
    #[arg(long, value_parser = parse_split, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Record id to run
    #[arg(long)]
    record: String,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to write the dataset into
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    len_text: Option<usize>,
    #[arg(long)]
    len_video: Option<usize>,
    #[arg(long)]
    len_audio: Option<usize>,
    #[arg(long)]
    dim_text: Option<usize>,
    #[arg(long)]
    dim_video: Option<usize>,
    #[arg(long)]
    dim_audio: Option<usize>,
    /// Gaussian noise standard deviation
    #[arg(long)]
    noise: Option<f64>,
    /// Amplitude of the class direction in text rows
    #[arg(long)]
    text_strength: Option<f64>,
    /// Amplitude of the square-wave signature in video/audio
    #[arg(long)]
    freq_strength: Option<f64>,
    /// Fraction of samples whose text carries no class signal
    #[arg(long)]
    text_suppress_frac: Option<f64>,
    /// Randomly flip each record's square wave by half a period
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    phase_jitter: Option<bool>,
}

#[derive(Args)]
struct WaveletArgs {
    /// Feature file to decompose
    #[arg(long)]
    input: PathBuf,
    /// Feature width of the file
    #[arg(long)]
    dim: usize,
    /// Length to resample to before the transform
    #[arg(long)]
    length: usize,
    /// Decomposition depth
    #[arg(long, default_value_t = 3)]
    levels: usize,
    /// Directory for the band files
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train(args) => {
            let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides())?;
            let art = cmd_train(&cfg, &mut |line| println!("{line}"))?;
            println!("last={}", art.last_path.display());
            match &art.best_path {
                Some(p) => println!("best={}", p.display()),
                None => println!("best=none"),
            }
            println!("log={}", art.log_path.display());
            Ok(())
        }
        Cmd::Evaluate(args) => {
            let cfg = checkpoint_layered_config(&args.run)?;
            let art = cmd_evaluate(&cfg, args.split)?;
            print!("{}", art.text);
            println!("report={}", art.report_path.display());
            println!("confusion={}", art.confusion_path.display());
            Ok(())
        }
        Cmd::Predict(args) => {
            let cfg = checkpoint_layered_config(&args.run)?;
            let out = cmd_predict(&cfg, &args.record)?;
            println!("{}", out.line);
            Ok(())
        }
        Cmd::Ablate(args) => {
            let cfg = RunConfig::resolve(args.config.as_deref(), &args.overrides())?;
            let art = cmd_ablate(&cfg, &mut |line| println!("{line}"))?;
            println!("table={}", art.table_path.display());
            Ok(())
        }
        Cmd::Synth(args) => {
            let section = SynthSection {
                seed: args.seed,
                n: args.n,
                classes: args.classes,
                len_text: args.len_text,
                len_video: args.len_video,
                len_audio: args.len_audio,
                dim_text: args.dim_text,
                dim_video: args.dim_video,
                dim_audio: args.dim_audio,
                noise: args.noise,
                text_strength: args.text_strength,
                freq_strength: args.freq_strength,
                text_suppress_frac: args.text_suppress_frac,
                phase_jitter: args.phase_jitter,
            };
            let dataset = wdmir_core::data::synthesize_dataset(&section.to_spec())
                .map_err(CliError::from)?;
            let manifest = write_dataset(&args.out, &dataset).map_err(CliError::from)?;
            println!("manifest={}", manifest.display());
            println!("records={}", dataset.len());
            Ok(())
        }
        Cmd::Wavelet(args) => {
            let art = cmd_wavelet(&args.input, args.dim, args.length, args.levels, &args.out)?;
            for band in &art.bands {
                println!("{}", format_band(band));
            }
            println!("recon_error={:.3e}", art.recon_error);
            Ok(())
        }
    }
}

/// Evaluate/predict resolution: the checkpoint's config snapshot is the
/// base layer, so unstated knobs (ablation flags, batch sizes, data
/// source) keep their training-time values; file and flags still win.
fn checkpoint_layered_config(args: &RunArgs) -> Result<RunConfig> {
    let over = args.overrides();
    let direct = RunConfig::resolve(args.config.as_deref(), &over)?;
    let ck_path = direct
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Usage("this command needs --checkpoint".into()))?;
    let ck = Checkpoint::load(&ck_path)?;
    let mut base = ck.config;
    base.checkpoint = Some(ck_path);
    RunConfig::resolve_from(&base, args.config.as_deref(), &over)
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    std::process::exit(0);
                }
                _ => {
                    let first = e
                        .to_string()
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments")
                        .trim()
                        .trim_start_matches("error: ")
                        .to_string();
                    eprintln!("error: usage: {first}");
                    std::process::exit(1);
                }
            }
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("{}", e.render());
        std::process::exit(e.exit_code());
    }
}
