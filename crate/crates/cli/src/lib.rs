//! Command-line front end: `decompose`, `train`, `params` and `eval`.
//!
//! Exit codes: 0 success, 2 usage or configuration, 3 I/O or codec,
//! 4 numerical failure, 1 anything else.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use wcnn::Error;

pub use commands::{cmd_decompose, cmd_eval, cmd_params, cmd_train, DecomposeReport, TrainSummary};
pub use config::{DataSource, RunConfig, SplitSpec};

#[derive(Debug, Parser)]
#[command(
    name = "wcnn",
    version,
    about = "Wavelet CNNs: decompose images, train, inspect and evaluate"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Multiresolution analysis of one PPM/PGM image, saved as subband PGMs.
    Decompose {
        input: PathBuf,
        #[arg(long)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch on a dataset directory or synthetic preset.
    Train(RunArgs),
    /// Per-layer trainable parameter table.
    Params {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 4)]
        classes: usize,
    },
    /// Accuracy and confusion matrix of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Settings shared by every run command. Flags override `--config`.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` file, e.g. a previous run's config.resolved.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset root laid out as <class>/<group>/<image>.ppm.
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<String>,
    /// Synthetic preset: gratings4 or coarse4.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// auto, groups, holdout:<group> or lists:<train>,<test>.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub base_channels: Option<String>,
    #[arg(long)]
    pub stages: Option<String>,
    /// all or detail-only.
    #[arg(long)]
    pub subband_mode: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub data_seed: Option<String>,
    /// Stop once test accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

impl RunArgs {
    pub fn resolve(&self) -> wcnn::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("data", &self.data),
            ("synthetic", &self.synthetic),
            ("split", &self.split),
            ("levels", &self.levels),
            ("base_channels", &self.base_channels),
            ("stages", &self.stages),
            ("subband_mode", &self.subband_mode),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("learning_rate", &self.learning_rate),
            ("seed", &self.seed),
            ("data_seed", &self.data_seed),
            ("target_accuracy", &self.target_accuracy),
            ("out", &self.out),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                c.set(key, v)
                    .map_err(|e| Error::Argument(format!("--{}: {e}", key.replace('_', "-"))))?;
            }
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Argument(format!("--set expects key=value, got {kv:?}")))?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Argument(_)
        | Error::Shape { .. }
        | Error::Build { .. }
        | Error::SpecMismatch(_)
        | Error::Protocol(_) => 2,
        Error::Io { .. } | Error::Codec { .. } | Error::Integrity(_) | Error::Ingestion(_) => 3,
        Error::Numerical(_) => 4,
        Error::State(_) => 1,
    }
}

fn dispatch(command: Command) -> wcnn::Result<()> {
    match command {
        Command::Decompose { input, levels, out } => cmd_decompose(&input, levels, &out).map(drop),
        Command::Train(run) => cmd_train(&run.resolve()?).map(drop),
        Command::Params { run, classes } => cmd_params(&run.resolve()?, classes).map(drop),
        Command::Eval { checkpoint, run } => cmd_eval(&run.resolve()?, &checkpoint).map(drop),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Sizes the global thread pool from `WCNN_THREADS`, if set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("WCNN_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("WCNN_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
