use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use jointspec::ModelVariant;

mod commands;
mod config;
mod data;
mod error;

use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "jointspec", version, about = "Joint trait and reflectance regression on environmental covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// joint or independent.
    #[arg(long, global = true)]
    variant: Option<ModelVariant>,
    #[arg(long, global = true)]
    iterations: Option<usize>,
    #[arg(long, global = true)]
    burnin: Option<usize>,
    /// Number of retained (thinned) states.
    #[arg(long, global = true)]
    keep: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Average, log-transform and standardize raw CSVs into a dataset directory.
    Prepare,
    /// Forward-simulate a dataset from truth parameters.
    Simulate,
    /// Run the sampler on a prepared dataset and persist the posterior.
    Fit,
    /// Cross-predict the missing block for partially observed sites.
    Predict,
    /// k-fold comparison of the joint and independent models.
    Cv,
    /// Posterior tables for correlations and coefficients.
    Report,
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.apply(&Overrides {
        seed: cli.seed,
        output: cli.output.clone(),
        variant: cli.variant,
        iterations: cli.iterations,
        burnin: cli.burnin,
        keep: cli.keep,
    });
    match cli.command {
        Command::Prepare => commands::prepare(&config),
        Command::Simulate => commands::simulate(&config),
        Command::Fit => commands::fit(&config),
        Command::Predict => commands::predict(&config),
        Command::Cv => commands::cv(&config),
        Command::Report => commands::report(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let _ = std::io::stdout().write_all(summary.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            ExitCode::FAILURE
        }
    }
}
