mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use aad_core::AadError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aad", version, about = "Auditory attention decoding experiments")]
struct Cli {
    /// JSON run configuration (train, eval)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Folds or subjects processed in parallel
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort
    Synth(SynthArgs),
    /// Convert acquisition-rate bundles to 64 Hz model input
    Preprocess {
        #[arg(long)]
        input: PathBuf,
    },
    /// Train per fold, save checkpoints and score the test folds
    Train(RunArgs),
    /// Score decoders, from checkpoints where given
    Eval(RunArgs),
    /// Component ablation of the network on a synthetic cohort
    Ablate(AblateArgs),
    /// Cluster learned spatial filters of saved checkpoints
    Cluster {
        #[arg(long)]
        checkpoints: PathBuf,
    },
    /// Receptive field of a stack of dilated convolutions
    Rf {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 64.0)]
        fs: f64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub subjects: usize,
    #[arg(long, default_value_t = 40)]
    pub trials: usize,
    #[arg(long, default_value_t = 26.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gain: f64,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    /// Write 128 Hz EEG and 8 kHz audio instead of model-rate bundles
    #[arg(long)]
    pub raw: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModeArg {
    Si,
    Ss,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum ModelArg {
    Catcn,
    Ridge,
    Cca,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// Preprocessed bundle directory
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub models: Option<Vec<ModelArg>>,
    /// Outer folds to run, comma separated
    #[arg(long, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Training windows drawn per epoch
    #[arg(long)]
    pub max_windows: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct AblateArgs {
    #[arg(long, default_value_t = 4)]
    pub subjects: usize,
    #[arg(long, default_value_t = 16)]
    pub trials: usize,
    #[arg(long, default_value_t = 26.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    pub snr: f64,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    /// Leave-one-subject-out folds to train per configuration
    #[arg(long, default_value_t = 1)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub max_windows: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
}

pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: usize,
    pub out: Option<PathBuf>,
}

impl Global {
    pub fn out(&self) -> Result<PathBuf, AadError> {
        self.out
            .clone()
            .ok_or_else(|| AadError::Config("--out is required for this command".into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AAD_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let g = Global {
        config: cli.config,
        seed: cli.seed,
        jobs: cli.jobs.max(1),
        out: cli.out,
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&g, &a),
        Command::Preprocess { input } => commands::preprocess(&g, &input),
        Command::Train(a) => commands::train(&g, &a),
        Command::Eval(a) => commands::eval(&g, &a),
        Command::Ablate(a) => commands::ablate(&g, &a),
        Command::Cluster { checkpoints } => commands::cluster(&g, &checkpoints),
        Command::Rf { k, n, fs } => commands::rf(k, n, fs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<AadError>().is_some_and(AadError::is_config);
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
