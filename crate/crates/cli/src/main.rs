mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<fedar_core::Error> for CliError {
    fn from(e: fedar_core::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<fedar_core::corpus::CorpusError> for CliError {
    fn from(e: fedar_core::corpus::CorpusError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fedar",
    version,
    about = "Multi-aspect review rating, attention keyword ranking and uncertainty triage",
    after_help = "Settings are read from --config (TOML) first; command-line flags override them. \
                  Outputs default to $FEDAR_OUT_DIR (or ./out) when --out is not given."
)]
pub struct Cli {
    /// Layered TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every randomized step (default 42).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Corpus file (JSON lines).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Trained model directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// train, dev, test or all.
    #[arg(long)]
    pub split: Option<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-keyword corpus.
    SynthData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes the checkpoint and metrics.jsonl into --out.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Word vectors in `word v1 .. vd` text format.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable the overall-rating input.
        #[arg(long)]
        no_or: bool,
        /// Disable deliberate attention.
        #[arg(long)]
        no_da: bool,
        /// Disable feature enrichment.
        #[arg(long)]
        no_fe: bool,
    },
    /// Accuracy and MSE on a split (default dev).
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Predicted ratings with attention traces (default split test).
    Predict {
        #[command(flatten)]
        common: Common,
    },
    /// Attention-ranked keyword tables (default split train).
    Keywords {
        #[command(flatten)]
        common: Common,
        /// aspect or opinion.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        top_k: Option<usize>,
        /// Restrict to one aspect by name.
        #[arg(long)]
        aspect: Option<String>,
    },
    /// Rank reviews by uncertainty and select the most uncertain (default split test).
    Uncertainty {
        #[command(flatten)]
        common: Common,
        /// lead, max-margin, pl-variance or mc-dropout.
        #[arg(long)]
        method: Option<String>,
        /// Fraction of reviews to select.
        #[arg(long)]
        top_frac: Option<f64>,
    },
    /// Per-token attention as JSON lines and an HTML highlight page (default split test).
    AttnExport {
        #[command(flatten)]
        common: Common,
        /// Restrict to one aspect by name.
        #[arg(long)]
        aspect: Option<String>,
        /// Number of reviews exported.
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
