//! Command-line front end: argument parsing, config resolution and one
//! handler per subcommand.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use thiserror::Error;

use urbanmon::pipeline::Step;
use urbanmon::raster::TileCoord;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] urbanmon::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "urbanmon", about = "Multi-temporal SAR/optical urban change monitoring")]
pub struct Cli {
    /// Worker threads; 1 gives exactly reproducible runs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every command that reads a run config.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// Run config (JSON); flags below override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Seed for folds, window selection, augmentation and dropout.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the parameter initialization.
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

/// `[name=]checkpoint_dir`; the name defaults to the directory name
/// without a trailing `_best`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArg {
    pub name: String,
    pub path: PathBuf,
}

impl std::str::FromStr for ModelArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((name, path)) = s.split_once('=') {
            if name.is_empty() || path.is_empty() {
                return Err(format!("expected NAME=DIR, got '{s}'"));
            }
            return Ok(Self { name: name.into(), path: path.into() });
        }
        let path = PathBuf::from(s);
        let stem = path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| format!("cannot name model from '{s}'"))?;
        Ok(Self {
            name: stem.strip_suffix("_best").unwrap_or(stem).to_string(),
            path,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub row: usize,
    pub col: usize,
}

impl std::str::FromStr for Pixel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (r, c) = s.split_once(',').ok_or_else(|| format!("expected ROW,COL, got '{s}'"))?;
        Ok(Self {
            row: r.trim().parse().map_err(|e| format!("bad row in '{s}': {e}"))?,
            col: c.trim().parse().map_err(|e| format!("bad column in '{s}': {e}"))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetArg {
    Testing,
    Trainval,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario: observation bundle, labels and a run config.
    Synth {
        /// Scenario JSON; the built-in desk scenario when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Stack and assemble a bundle; writes frame timestamps and the normalization manifest.
    Stack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Stale-resampling step for both SAR orbits (days or `inf`).
        #[arg(long)]
        sar_step: Option<Step>,
        /// Stale-resampling step for optical observations (days or `inf`).
        #[arg(long)]
        opt_step: Option<Step>,
    },
    /// List the retained sliding windows of every tile.
    Windows {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train transfer variants on cross-validation folds.
    Transfer {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// 1-based variant; all folds when omitted.
        #[arg(long)]
        variant: Option<usize>,
    },
    /// Predict labeled tiles with one or more checkpoints.
    Predict {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `[NAME=]DIR`; defaults to every `V*_best` checkpoint in the run directory.
        #[arg(long = "model")]
        models: Vec<ModelArg>,
        #[arg(long, value_enum, default_value = "testing")]
        dataset: DatasetArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add the geometric-mean combination of all variants to a prediction set.
    Combine {
        #[arg(long)]
        pred: PathBuf,
        /// Defaults to the prediction directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every model of a prediction set against labels.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Tiles left out of the pooled pixels, as `Y:X`.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<TileCoord>,
        #[arg(long, value_enum, default_value = "testing")]
        dataset: DatasetArg,
        /// Side of the scored center crop; tile size minus two when omitted.
        #[arg(long)]
        crop: Option<usize>,
        /// Defaults to `<pred>/metrics`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Observation-frequency ablation over stale-resampling steps.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "model")]
        models: Vec<ModelArg>,
        /// Steps in days or `inf`.
        #[arg(long, value_delimiter = ',', default_values = ["120", "inf"])]
        deltas: Vec<Step>,
        /// Any of SAR, OPT, both.
        #[arg(long, value_delimiter = ',', default_values = ["SAR", "OPT", "both"])]
        axes: Vec<urbanmon::ablation::ModeAxis>,
        #[arg(long, value_enum, default_value = "testing")]
        dataset: DatasetArg,
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<TileCoord>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-window prediction time series of selected pixels.
    Trace {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "model")]
        models: Vec<ModelArg>,
        #[arg(long)]
        tile: TileCoord,
        /// Pixel inside the tile as `ROW,COL`; repeatable.
        #[arg(long = "pixel", required = true)]
        pixels: Vec<Pixel>,
        /// CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the number of trainable parameters.
    ParamCount {
        /// Filters of the five hidden layers.
        #[arg(long, value_delimiter = ',', num_args = 5)]
        topology: Option<Vec<usize>>,
        /// Also list every tensor.
        #[arg(long)]
        verbose: bool,
    },
}

pub fn version_string() -> String {
    format!(
        "{} (checkpoint format {}, bundle format 1)",
        env!("CARGO_PKG_VERSION"),
        urbanmon::model::CHECKPOINT_VERSION
    )
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = Cli::command().version(version_string()).try_get_matches_from(argv);
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already configured: {e}");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
