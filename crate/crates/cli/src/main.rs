//! `afcl`: runs the experiment harness from JSON configurations.

use std::path::PathBuf;
use std::process::ExitCode;

use afcl_core::experiments::{list_experiments, run_to_dir, ExperimentConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "afcl",
    version,
    about = "Continual-learning experiments with adaptive filters"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write summary.json plus its CSVs.
    Run {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed (overrides `seed` in the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the available experiments.
    List,
}

fn run(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>) -> Result<bool, afcl_core::Error> {
    let mut cfg = ExperimentConfig::from_path(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let out = out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.as_str()));
    let outcome = run_to_dir(&cfg, Some(&out))?;
    let summary = &outcome.summary;
    for c in &summary.checks {
        let mark = if c.pass { "ok  " } else { "FAIL" };
        println!(
            "{mark} {}: value {:e}, bound {:e}, tol {:e}",
            c.name, c.value, c.bound, c.tol
        );
    }
    match summary.first_failure() {
        None => println!(
            "{}: pass ({:.3}s), artifacts in {}",
            summary.experiment,
            outcome.seconds,
            out.display()
        ),
        Some(c) => eprintln!("{}: first violated check: {}", summary.experiment, c.name),
    }
    Ok(summary.pass)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::List => {
            for (name, description) in list_experiments() {
                println!("{name}: {description}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, out, seed } => match run(config, out, seed) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(1),
            Err(e) => {
                log::error!("{e}");
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
