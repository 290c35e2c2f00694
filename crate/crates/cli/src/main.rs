mod commands;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "relbin", version, about = "Bayesian latent-feature models for mixed categorical and real data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; every field has a default.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Continue an interrupted fit from its checkpoint.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset from the model.
    Simulate,
    /// Run the sampler on a dataset.
    Fit(commands::DataArgs),
    /// Write posterior summaries of a trace.
    Summarize {
        /// Trace to summarize (default: trace.jsonl in the output directory).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Build a dendrogram from a correlation matrix CSV.
    Cluster {
        #[arg(long)]
        input: PathBuf,
    },
    /// Held-out prediction sweep over missing fractions and prior variants.
    Evaluate(commands::DataArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Simulate => commands::simulate(&cli.common),
        Command::Fit(d) => commands::fit(&cli.common, d),
        Command::Summarize { trace } => commands::summarize(&cli.common, trace.as_deref()),
        Command::Cluster { input } => commands::cluster(&cli.common, input),
        Command::Evaluate(d) => commands::evaluate(&cli.common, d),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
