//! JSON-configured experiment runner over `tesa-core`.
//!
//! A run reads an [`ExperimentConfig`], resolves the experiment and system
//! names, and writes one CSV per time series plus a `summary.json` into
//! `<output root>/<experiment>-<system>-seed<seed>/`.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use serde_json::{json, Value};
use tesa_core::registry::{list_registry, SystemId};

pub use config::{ExperimentConfig, Params};
pub use experiments::ExperimentKind;

/// Environment variable naming the default output root.
pub const OUTPUT_DIR_ENV: &str = "TESA_OUTPUT_DIR";
/// Output root when neither the config nor the environment sets one.
pub const DEFAULT_OUTPUT_DIR: &str = "tesa-out";

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Config(String),
    UnknownName(String),
    Io(String),
    Numerical(String),
    Divergence { time: f64, summary: Option<PathBuf> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownName(_) => 2,
            CliError::Divergence { .. } => 3,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid config: {m}"),
            CliError::UnknownName(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Divergence { time, summary } => {
                write!(f, "solution escaped at t = {time}")?;
                if let Some(p) = summary {
                    write!(f, " (summary in {})", p.display())?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<tesa_core::Error> for CliError {
    fn from(e: tesa_core::Error) -> Self {
        match e {
            tesa_core::Error::Divergence { time } => CliError::Divergence { time, summary: None },
            other => CliError::Numerical(other.to_string()),
        }
    }
}

/// Settings that are not part of the experiment itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for independent sweep points; `None` or `1` is serial.
    pub jobs: Option<usize>,
    /// Output root used when the config has no `output_dir`.
    pub output_root: Option<PathBuf>,
}

/// Files written by a successful run and its summary.
#[derive(Debug, Clone)]
pub struct Report {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

fn unknown_system(name: &str) -> CliError {
    CliError::UnknownName(format!("unknown system `{name}`; registry: {}", list_registry().join(", ")))
}

fn unknown_experiment(name: &str) -> CliError {
    let names: Vec<&str> = ExperimentKind::ALL.iter().map(|e| e.name()).collect();
    CliError::UnknownName(format!("unknown experiment `{name}`; available: {}", names.join(", ")))
}

fn output_root(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    cfg.output_dir
        .clone()
        .or_else(|| opts.output_root.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Resolves names, runs the experiment and writes its outputs.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<Report, CliError> {
    let kind = ExperimentKind::lookup(&cfg.experiment).ok_or_else(|| unknown_experiment(&cfg.experiment))?;
    let system = SystemId::lookup(&cfg.system).ok_or_else(|| unknown_system(&cfg.system))?;
    if !kind.systems().contains(&system) {
        let names: Vec<&str> = kind.systems().iter().map(|s| s.name()).collect();
        return Err(CliError::UnknownName(format!(
            "experiment `{}` does not run on `{}`; supported: {}",
            kind.name(),
            system.name(),
            names.join(", ")
        )));
    }
    let mut params = Params::new(&cfg.parameters, experiments::allowed_keys(kind, system))?;
    let dir = output_root(cfg, opts).join(format!("{}-{}-seed{}", kind.name(), system.name(), cfg.seed));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.unwrap_or(1).max(1))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let outcome = pool.install(|| experiments::run(kind, system, &mut params, cfg.seed));

    let mut summary = json!({
        "schema": 1,
        "experiment": kind.name(),
        "system": system.name(),
        "seed": cfg.seed,
        "parameters": params.effective(),
    });
    match outcome {
        Ok(out) => {
            let mut files = Vec::new();
            for s in &out.series {
                files.push(output::write_csv(&dir, s)?);
            }
            summary["status"] = json!("ok");
            summary["files"] = json!(out.series.iter().map(|s| format!("{}.csv", s.name)).collect::<Vec<_>>());
            summary["results"] = out.results;
            files.push(output::write_json(&dir, &summary)?);
            Ok(Report { dir, files, summary })
        }
        Err(CliError::Divergence { time, .. }) => {
            summary["status"] = json!("diverged");
            summary["escape_time"] = output::num(time);
            let path = output::write_json(&dir, &summary)?;
            Err(CliError::Divergence { time, summary: Some(path) })
        }
        Err(e) => Err(e),
    }
}
