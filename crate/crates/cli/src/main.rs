//! `geomi`: command-line pipeline for spatial analysis of language-model
//! activations over gazetteer places.

mod commands;
mod config;
mod manifest;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::Settings;

#[derive(Parser, Debug)]
#[command(name = "geomi", version, about, arg_required_else_help = true)]
struct Cli {
    /// Worker threads (default: one per core). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// TOML file with defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter GeoNames dumps into a places table with prompts.
    Ingest(IngestArgs),
    /// Write the prompt list of a places table for activation extraction.
    Prompts(PromptsArgs),
    /// Generate synthetic activations with planted spatial signal.
    Synth(SynthArgs),
    /// Per-unit global and local Moran's I.
    Moran(MoranArgs),
    /// Train a TopK sparse autoencoder on an activation file.
    SaeTrain(SaeTrainArgs),
    /// Encode activations into sparse autoencoder features.
    SaeEncode(SaeEncodeArgs),
    /// Summarize significant units from one or more Moran tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// GeoNames country dump (repeatable).
    #[arg(long)]
    pub geonames: Vec<PathBuf>,
    #[arg(long)]
    pub admin1: Option<PathBuf>,
    /// Needed for Italian places, which are qualified by province.
    #[arg(long)]
    pub admin2: Option<PathBuf>,
    /// uk, it or us4 (repeatable or comma-separated; default all).
    #[arg(long, value_delimiter = ',')]
    pub region: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PromptsArgs {
    #[arg(long)]
    pub places: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub places: Option<PathBuf>,
    /// lat-gradient, region-block, iid-noise or mixture.
    #[arg(long)]
    pub signal: Option<String>,
    #[arg(long)]
    pub units: Option<usize>,
    /// Noise standard deviation relative to the unit-variance signal.
    #[arg(long)]
    pub noise_sd: Option<f64>,
    /// Prompt qualifier marking the block for region-block (e.g. Scotland).
    #[arg(long)]
    pub block: Option<String>,
    /// Share of signal units for mixture.
    #[arg(long)]
    pub fraction: Option<f64>,
    #[arg(long)]
    pub layer: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MoranArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub places: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub knn_k: Option<usize>,
    #[arg(long)]
    pub n_perm: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub p_threshold: Option<f64>,
    #[arg(long)]
    pub i_threshold: Option<f64>,
    /// neuron or sae-feature.
    #[arg(long)]
    pub kind: Option<String>,
    /// Units for local Moran's I: flagged, all, none or a comma list.
    #[arg(long)]
    pub local: Option<String>,
    /// Cluster map CSV of the local results.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    /// Cluster map as GeoJSON.
    #[arg(long)]
    pub geojson: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SaeTrainArgs {
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub expansion: Option<usize>,
    /// Active features per code; several values run a sweep and keep the
    /// lowest final loss.
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch losses of every trained k as CSV.
    #[arg(long)]
    pub losses: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SaeEncodeArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Moran table (repeatable).
    #[arg(long)]
    pub moran: Vec<PathBuf>,
    /// Dead-feature fraction to include in the summary.
    #[arg(long)]
    pub dead_fraction: Option<f64>,
    /// Re-evaluate significance with these thresholds.
    #[arg(long)]
    pub p_threshold: Option<f64>,
    #[arg(long)]
    pub i_threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Bad invocation or configuration; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<geomi::Error>() {
            return if e.is_numerical() { 3 } else { 2 };
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    let section = match &cli.command {
        Command::Ingest(_) => "ingest",
        Command::Prompts(_) => "prompts",
        Command::Synth(_) => "synth",
        Command::Moran(_) => "moran",
        Command::SaeTrain(_) => "sae-train",
        Command::SaeEncode(_) => "sae-encode",
        Command::Report(_) => "report",
    };
    let settings = Settings::load(cli.config.as_deref(), section)?;
    let jobs = settings.get(cli.jobs, "jobs", 0usize)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    pool.install(|| match cli.command {
        Command::Ingest(a) => commands::ingest(a, &settings),
        Command::Prompts(a) => commands::prompts(a, &settings),
        Command::Synth(a) => commands::synth(a, &settings),
        Command::Moran(a) => commands::moran(a, &settings),
        Command::SaeTrain(a) => commands::sae_train(a, &settings),
        Command::SaeEncode(a) => commands::sae_encode(a, &settings),
        Command::Report(a) => commands::report(a, &settings),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
