//! Runs a bundled experiment configuration in-process and prints the
//! summary table that `betacores aggregate` would write.
//!
//! `cargo run --release --example run_config -- configs/groups.json`

use betacores::experiment::{self, ExperimentConfig};

fn main() -> betacores::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/groups.json".into());
    let mut cfg = ExperimentConfig::load(&path)?;
    cfg.trials = cfg.trials.min(2);
    let out = experiment::execute(&cfg)?;
    for (cell, err) in &out.failures {
        eprintln!("{} failed: {err}", cell.label());
    }
    println!("{:<11} {:>5} {:>4} {:>5} {:<20} {:>10} {:>10} {:>10}", "method", "beta", "F", "size", "metric", "median", "q25", "q75");
    for r in experiment::aggregate(&out.metrics)? {
        println!(
            "{:<11} {:>5} {:>4} {:>5} {:<20} {:>10.4} {:>10.4} {:>10.4}",
            r.method,
            r.beta,
            r.f,
            r.size,
            r.metric.as_str(),
            r.median,
            r.q25,
            r.q75
        );
    }
    Ok(())
}
