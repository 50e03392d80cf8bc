use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tesa_cli::{run_experiment, CliError, ExperimentConfig, RunOptions};
use tesa_core::registry::{list_registry, SystemId};

#[derive(Parser)]
#[command(name = "tesa", version, about = "Transverse exponential stability experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override a config field or parameter, e.g. `--set ell=2`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Worker threads for independent sweep points.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// List the built-in systems.
    List,
}

fn run(config: PathBuf, overrides: Vec<String>, jobs: usize) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&config)?;
    for o in &overrides {
        cfg.apply_override(o)?;
    }
    let report = run_experiment(&cfg, &RunOptions { jobs: Some(jobs), output_root: None })?;
    for f in &report.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for name in list_registry() {
                let desc = SystemId::lookup(name).map(|s| s.description()).unwrap_or_default();
                println!("{name}\t{desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, overrides, jobs } => match run(config, overrides, jobs) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("tesa: {e}");
                ExitCode::from(e.exit_code() as u8)
            }
        },
    }
}
