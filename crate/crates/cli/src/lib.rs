//! `uxfb`: the survey-feedback pipeline as a command-line tool.
//!
//! Exit codes: 0 success, 1 I/O, 2 malformed input or config, 3 model or
//! length mismatch, 4 nothing to analyze, 5 summary failed validation.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand};
use uxfeedback::corpus::{Format, SurveyKind};
use uxfeedback::synth::SynthConfig;

pub mod commands;
pub mod config;
pub mod error;
pub mod http;

pub use config::{Overrides, PipelineConfig};
pub use error::{exit_code, Code};

#[derive(Debug, Parser)]
#[command(
    name = "uxfb",
    version,
    about = "Classify, analyze and summarize survey comments"
)]
pub struct Cli {
    /// Pipeline config (TOML); paths inside resolve relative to it.
    /// Defaults to ./uxfb.toml when present.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for fold assignment and the bootstrap.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// `2024`, `2024Q3` or `2024-01-01..2024-04-01` (end exclusive, UTC).
    #[arg(long, global = true)]
    pub period: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a comment file (and responses) and print counts.
    Ingest {
        /// Comment file; defaults to `paths.comments`.
        file: Option<PathBuf>,
        /// `jsonl` or `csv`; guessed from the extension otherwise.
        #[arg(long)]
        format: Option<String>,
        /// Survey responses (JSONL); defaults to `paths.responses`.
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Grid-search boosting parameters and per-label thresholds.
    Tune,
    /// Train the topic model and write the bundle.
    Train {
        /// Retrain the existing bundle, bumping its version.
        #[arg(long)]
        retrain: bool,
    },
    /// Per-label and micro metrics as CSV.
    Evaluate {
        /// JSONL of `{"id", "labels"}`, one per human-labeled comment in order.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Label every comment without human labels.
    Predict {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sentiment versus survey-metric statistics.
    Stats {
        /// `tutorial` or `app`; repeatable. Default: all present.
        #[arg(long = "kind")]
        kinds: Vec<String>,
    },
    /// Citation-checked summaries per product.
    Summarize {
        #[arg(long)]
        product: Option<String>,
    },
    /// Assemble the markdown report.
    Report,
    /// Write a synthetic corpus (comments.jsonl, responses.jsonl).
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        /// Number of human-labeled comments (default 500).
        #[arg(long)]
        labeled: Option<usize>,
    },
    /// Print the effective configuration.
    Config,
}

/// Picked up from the working directory when `--config` is absent.
pub const DEFAULT_CONFIG: &str = "uxfb.toml";

pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<PipelineConfig> {
    let local = Path::new(DEFAULT_CONFIG);
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None if local.is_file() => {
            log::info!("using {DEFAULT_CONFIG} from the working directory");
            PipelineConfig::load(local)?
        }
        None => PipelineConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        period: cli.period.clone(),
    };
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    match &cli.command {
        Command::Ingest {
            file,
            format,
            responses,
        } => {
            let format = format
                .as_deref()
                .map(|f| {
                    f.parse::<Format>()
                        .map_err(|e| error::coded(Code::Schema, e))
                })
                .transpose()?;
            commands::ingest(&cfg, file.as_deref(), format, responses.as_deref(), out)
        }
        Command::Tune => commands::tune(&cfg, out),
        Command::Train { retrain } => commands::train(&cfg, *retrain, out),
        Command::Evaluate { predictions } => commands::evaluate(&cfg, predictions.as_deref(), out),
        Command::Predict { out: dest } => commands::predict(&cfg, dest.as_deref(), out),
        Command::Stats { kinds } => {
            let kinds = kinds
                .iter()
                .map(|k| {
                    k.parse::<SurveyKind>()
                        .map_err(|e| error::coded(Code::Schema, e.to_string()))
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            commands::stats(&cfg, &kinds, out)
        }
        Command::Summarize { product } => commands::summarize(&cfg, product.as_deref(), out),
        Command::Report => commands::report(&cfg, out),
        Command::Synth { out_dir, labeled } => {
            let mut sc = SynthConfig::default();
            if let Some(n) = labeled {
                sc.labeled_comments = *n;
            }
            if let Some(s) = cli.seed {
                sc.seed = s;
            }
            commands::synth(&sc, out_dir, out)
        }
        Command::Config => out
            .write_all(cfg.to_toml().as_bytes())
            .context("writing config"),
    }
}
