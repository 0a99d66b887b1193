//! Command-line front end of the source ranking pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use sourcerank::config::PipelineConfig;
use sourcerank::pipeline::{Pipeline, RunOptions, Stage, StageStatus};
use sourcerank::score::ModelId;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "sourcerank", version, about = "Rank cited web sources of topic articles over time")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args)]
struct GlobalArgs {
    /// Pipeline configuration (TOML)
    #[arg(long, global = true, default_value = "sourcerank.toml")]
    config: PathBuf,

    /// Restrict to one configured language (repeatable)
    #[arg(long = "language", global = true)]
    languages: Vec<String>,

    /// First day of the analysis window (YYYY-MM-DD)
    #[arg(long, global = true)]
    from: Option<NaiveDate>,

    /// Last day of the analysis window (YYYY-MM-DD)
    #[arg(long, global = true)]
    to: Option<NaiveDate>,

    /// Model to report: F, PR or PR2 (repeatable; default all)
    #[arg(long = "model", global = true)]
    models: Vec<ModelId>,

    /// Rank threshold for timeline membership
    #[arg(long, global = true)]
    top_k: Option<u32>,

    /// Use cached responses only; any cache miss is an error
    #[arg(long, global = true)]
    offline: bool,

    /// Recompute stages whose artifacts already exist
    #[arg(long, global = true)]
    force: bool,

    /// Log filter, e.g. `info` or `sourcerank=debug`
    #[arg(long, global = true, default_value = "info", env = "SOURCERANK_LOG")]
    log: String,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Build the article corpus of each language
    Identify,
    /// Retrieve revision histories, templates and redirects
    Fetch,
    /// Expand templates, extract citations and resolve domains
    Extract,
    /// Ingest daily page views
    Views,
    /// Build daily snapshots and compute scores
    Score,
    /// Write rank timelines and the language heatmap
    Report,
    /// Run every stage in order
    Run,
}

impl Command {
    fn stages(self) -> Vec<Stage> {
        match self {
            Command::Identify => vec![Stage::Identify],
            Command::Fetch => vec![Stage::Fetch],
            Command::Extract => vec![Stage::Extract],
            Command::Views => vec![Stage::Views],
            Command::Score => vec![Stage::Snapshot, Stage::Score],
            Command::Report => vec![Stage::Report],
            Command::Run => Stage::ALL.to_vec(),
        }
    }
}

fn load_config(args: &GlobalArgs) -> anyhow::Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)?;
    if let Some(from) = args.from {
        config.start = from;
    }
    if let Some(to) = args.to {
        config.end = to;
    }
    if let Some(k) = args.top_k {
        config.top_k = k;
    }
    config.offline |= args.offline;
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let args = &cli.global;
    let config = load_config(args).with_context(|| format!("loading {}", args.config.display()))?;
    let options = RunOptions {
        force: args.force,
        languages: (!args.languages.is_empty()).then(|| args.languages.clone()),
        models: (!args.models.is_empty()).then(|| args.models.clone()),
    };
    let pipeline = Pipeline::new(config, options)?;
    let manifest = pipeline.run(&cli.command.stages())?;
    for (stage, record) in &manifest.stages {
        if record.status != StageStatus::Failed {
            println!(
                "{stage:<9} {:<9} {} ms",
                format!("{:?}", record.status).to_lowercase(),
                record.duration_ms
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.global.log).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
