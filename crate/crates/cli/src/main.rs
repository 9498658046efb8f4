//! `tilembed`: the tile-embedding pipeline from the command line.
//!
//! Each subcommand is one stage and reads the artifacts of the stages
//! before it from the output directory:
//!
//! ```text
//! ingest → train-ae → index ─────────────┐
//!             │   └──→ embed → train-gen → generate → eval-levels
//!             └──→ crossfold → report
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
//! Failures print one JSON line on stderr.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tilembed::levelgen::Traversal;
use tilembed::{Error, Result};

use crate::commands::Layout;
use crate::config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "tilembed", version, about = "Affordance-rich tile embeddings for 2D game levels")]
struct Cli {
    /// TOML pipeline config; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `threads`. Numeric work is single-threaded, so every value
    /// reproduces the same bytes.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Row,
    Symmetric,
}

impl From<Mode> for Traversal {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Row => Traversal::Row,
            Mode::Symmetric => Traversal::Symmetric,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the deduplicated training dataset from the corpus.
    Ingest,
    /// Train the autoencoder on the whole dataset.
    TrainAe,
    /// Hold out each annotated game (or one) and score affordance prediction.
    Crossfold {
        #[arg(long)]
        hold_out: Option<String>,
    },
    /// Embed every corpus level with the trained autoencoder.
    Embed,
    /// Build the nearest-neighbour index over the dataset's embeddings.
    Index,
    /// Train the level generator.
    TrainGen {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Generate levels and write png, tiles, embeddings and affordances.
    Generate {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Linearity and leniency of generated and corpus levels, as CSV.
    EvalLevels {
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Tabulate the cross-fold reports.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    let mode = match &cli.command {
        Command::TrainGen { mode } | Command::Generate { mode } | Command::EvalLevels { mode } => *mode,
        _ => None,
    };
    if let Some(m) = mode {
        cfg.generate.mode = m.into();
    }
    let cfg = cfg.resolve()?;
    let layout = Layout { out: cfg.out.clone() };
    match &cli.command {
        Command::Ingest => commands::ingest(&cfg, &layout),
        Command::TrainAe => commands::train_ae(&cfg, &layout),
        Command::Crossfold { hold_out } => commands::crossfold_cmd(&cfg, &layout, hold_out.as_deref()),
        Command::Embed => commands::embed(&cfg, &layout),
        Command::Index => commands::index(&cfg, &layout),
        Command::TrainGen { .. } => commands::train_gen(&cfg, &layout),
        Command::Generate { .. } => commands::generate_cmd(&cfg, &layout),
        Command::EvalLevels { .. } => commands::eval_levels(&cfg, &layout),
        Command::Report => commands::report(&cfg, &layout),
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if e.is_numeric() {
        4
    } else {
        3
    }
}

fn kind(code: u8) -> &'static str {
    match code {
        2 => "config",
        4 => "numeric",
        _ => "data",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = exit_code(&e);
            let line = serde_json::json!({ "error": kind(code), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
