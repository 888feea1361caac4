//! Command-line driver: reads a TOML config, runs one subcommand and writes
//! its outputs under a run directory keyed by config hash and seed.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{ConfigError, RunConfig};
use output::RunDir;

#[derive(Debug, Parser)]
#[command(name = "wtlab", version, about = "Three-wave turbulence laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `ensemble.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Integrate one trajectory and record snapshots.
    Simulate,
    /// Compare direct integration with the second-order expansion.
    ExpandCheck,
    /// Ensemble statistics of phases and intensities.
    Stats,
    /// Evolve the kinetic equation and solve the one-mode PDF equation.
    Kinetics,
    /// Evolve the joint amplitude PDF of a few modes.
    ZsPdf,
    /// Export the triad table.
    Triads,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::ExpandCheck => "expand-check",
            Command::Stats => "stats",
            Command::Kinetics => "kinetics",
            Command::ZsPdf => "zs-pdf",
            Command::Triads => "triads",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] wtlab::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

pub(crate) fn config_error(field: &str, reason: &str) -> CliError {
    CliError::Config(ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    })
}

impl CliError {
    /// Machine-readable error record.
    pub fn record(&self) -> serde_json::Value {
        let (kind, field, line) = match self {
            CliError::Config(ConfigError::Parse { line, .. }) => ("parse", None, Some(*line)),
            CliError::Config(ConfigError::Invalid { field, .. }) => ("invalid_config", Some(field.clone()), None),
            CliError::Core(wtlab::Error::InvalidParameter { name, .. }) => ("invalid_parameter", Some(name.to_string()), None),
            CliError::Core(wtlab::Error::CflViolation { .. }) => ("cfl_violation", None, None),
            CliError::Core(wtlab::Error::BlowUp { .. } | wtlab::Error::Member { .. }) => ("blow_up", None, None),
            CliError::Core(_) => ("numerical", None, None),
            CliError::Io(_) => ("io", None, None),
            CliError::Pool(_) => ("threads", None, None),
        };
        json!({
            "status": "error",
            "kind": kind,
            "field": field,
            "line": line,
            "message": self.to_string(),
            "version": output::VERSION,
        })
    }
}

/// Outcome of a successful run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    pub lines: Vec<String>,
}

/// Loads and resolves the config named by `cli`, applying the seed override.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(seed) = cli.seed {
        cfg.ensemble.seed = seed;
    }
    cfg.validate()?;
    cfg.resolve()?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<RunReport, CliError> {
    let cfg = load_config(cli)?;
    let dir = RunDir::create(&cli.out, cli.command.name(), cfg.to_toml(), cfg.ensemble.seed)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads", "must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Pool(e.to_string()))?;
    let result = pool.install(|| match cli.command {
        Command::Simulate => commands::simulate(&cfg, &dir),
        Command::ExpandCheck => commands::expand_check(&cfg, &dir),
        Command::Stats => commands::stats(&cfg, &dir),
        Command::Kinetics => commands::kinetics(&cfg, &dir),
        Command::ZsPdf => commands::zs_pdf(&cfg, &dir),
        Command::Triads => commands::triads(&cfg, &dir),
    });
    match result {
        Ok(lines) => Ok(RunReport { dir: dir.path, lines }),
        Err(e) => {
            let mut text = serde_json::to_string_pretty(&e.record()).expect("json serializes");
            text.push('\n');
            // best effort: the error itself is what gets reported
            let _ = dir.bytes("error.json", text.as_bytes());
            Err(e)
        }
    }
}
