use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use migrants::experiment::{run_experiment, ExperimentConfig, Mode};

/// Runs simulation, kinetic, comparison, analysis, and verification experiments.
#[derive(Parser, Debug)]
#[command(name = "migrants", version)]
struct Cli {
    /// simulate | kinetic | compare | analyze | verify; falls back to the config's `mode`
    mode: Option<Mode>,
    /// TOML experiment file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in parameter set layered under the config file
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-key override, e.g. `run.replicates=50`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = ExperimentConfig::load(cli.config.as_deref(), cli.preset.as_deref(), &cli.sets).and_then(|mut cfg| {
        if cli.mode.is_some() {
            cfg.mode = cli.mode;
        }
        run_experiment(&cfg, &cli.out)
    });
    match result {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("config_hash {}", outcome.config_hash);
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} check failed", outcome.mode);
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
