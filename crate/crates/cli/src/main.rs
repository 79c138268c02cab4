//! `detox-eval`: stage-per-subcommand driver for the evaluation harness.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use detox_eval::report::Formats;

use crate::commands::{RunContext, Section};
use crate::config::LoadedConfig;

#[derive(Parser)]
#[command(name = "detox-eval", version, about = "Abusive-text detection and detoxification evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output root; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Answer from the config's mock script instead of remote providers.
    #[arg(long)]
    mock: bool,
    /// Comma-separated subset of configured providers.
    #[arg(long, value_delimiter = ',')]
    models: Vec<String>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 1 when the command produced warnings.
    #[arg(long)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate the dataset.
    Ingest(Common),
    /// Write cleaned text and content tokens for every record.
    Preprocess(Common),
    /// Ask each provider to classify every record as abusive or not.
    Detect {
        #[command(flatten)]
        common: Common,
        /// Keep the existing run log and skip completed records.
        #[arg(long)]
        resume: bool,
    },
    /// Ask each provider to rewrite the abusive records politely.
    Transform {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        resume: bool,
    },
    /// Compute analysis sections from the run logs.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "ngrams,logodds,sentiment,similarity,hate")]
        sections: Vec<Section>,
    },
    /// Render the collected sections as CSV, JSON, Markdown and plot data.
    Report {
        #[command(flatten)]
        common: Common,
        /// Any of csv,json,markdown,svg_plotdata.
        #[arg(long, default_value = "csv,json,markdown,svg_plotdata")]
        formats: Formats,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Ingest(c) | Command::Preprocess(c) => c,
            Command::Detect { common, .. } | Command::Transform { common, .. } => common,
            Command::Analyze { common, .. } | Command::Report { common, .. } => common,
        }
    }
}

fn context(common: &Common) -> Result<RunContext> {
    let cfg = LoadedConfig::load(&common.config)?;
    let seed = common.seed.unwrap_or(cfg.config.seed);
    let batch_size = common.batch_size.unwrap_or(cfg.config.batch_size);
    let workers = common.workers.unwrap_or(cfg.config.workers);
    if batch_size == 0 {
        bail!("--batch-size must be at least 1");
    }
    if workers == 0 {
        bail!("--workers must be at least 1");
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.resolve(&cfg.config.out_dir));
    let mut cfg = cfg;
    cfg.config.seed = seed;
    cfg.config.batch_size = batch_size;
    cfg.config.workers = workers;
    let run_id = cfg.run_id();
    if run_id.is_empty() || run_id.contains(['/', '\\']) || run_id.starts_with('.') {
        bail!("run_id {run_id:?} is not a plain directory name");
    }
    let run_dir = out.join("runs").join(&run_id);
    std::fs::create_dir_all(&run_dir)?;
    Ok(RunContext {
        cfg,
        run_id,
        run_dir,
        seed,
        batch_size,
        workers,
        mock: common.mock,
        models: common.models.clone(),
    })
}

fn run(cli: &Cli) -> Result<commands::Outcome> {
    let ctx = context(cli.command.common())?;
    match &cli.command {
        Command::Ingest(_) => commands::ingest(&ctx),
        Command::Preprocess(_) => commands::preprocess(&ctx),
        Command::Detect { resume, .. } => commands::detect(&ctx, *resume),
        Command::Transform { resume, .. } => commands::transform(&ctx, *resume),
        Command::Analyze { sections, .. } => commands::analyze(&ctx, sections),
        Command::Report { formats, .. } => commands::report(&ctx, *formats),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            if !outcome.warnings.is_empty() {
                eprintln!("{} warning(s)", outcome.warnings.len());
                if cli.command.common().strict {
                    return ExitCode::from(1);
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
