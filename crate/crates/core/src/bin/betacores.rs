use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use betacores::experiment::{self, ExperimentConfig};
use betacores::{selftest, Error};
use clap::{Parser, Subcommand};

/// Robust sparse Bayesian coresets.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write metrics and traces.
    Run { config: PathBuf },
    /// Summarize a metrics CSV by median and quartiles.
    Aggregate {
        metrics: PathBuf,
        /// Output file (defaults to stdout).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Selftest,
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = experiment::run_experiment(&cfg)?;
            eprintln!(
                "{} metric rows, {} failed cells, written to {}",
                out.metrics.len(),
                out.failures.len(),
                cfg.resolved_output_dir().display()
            );
        }
        Command::Aggregate { metrics, output } => {
            let input = File::open(&metrics)?;
            match output {
                Some(path) => experiment::aggregate_csv(input, File::create(path)?)?,
                None => experiment::aggregate_csv(input, std::io::stdout().lock())?,
            };
        }
        Command::Selftest => {
            let checks = selftest::run();
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(Error::InvalidArgument(format!("{failed} selftest checks failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
