//! Experiment runner: configuration, presets, and the five modes.
//!
//! Every output file carries the SHA-256 of the resolved configuration, as a
//! `config_hash` field in JSON files and a `# config_hash=` first line in CSV
//! files.

mod config;
mod meso;
mod output;
pub mod presets;
mod simulate;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use config::{
    AnalysisSpec, ExperimentConfig, InitialSpec, KernelFamily, KernelSpec, KineticSpec, ModelSpec, ProbeSpec, RunSpec, VerifySpec,
};

use crate::error::{Error, Result};
use output::Output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Kinetic,
    Compare,
    Analyze,
    Verify,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Simulate, Mode::Kinetic, Mode::Compare, Mode::Analyze, Mode::Verify];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Kinetic => "kinetic",
            Mode::Compare => "compare",
            Mode::Analyze => "analyze",
            Mode::Verify => "verify",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config {
            key: "mode".into(),
            message: format!("unknown mode `{s}`"),
        })
    }
}

/// Result of one experiment.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub mode: Mode,
    /// False when a check performed by the mode failed.
    pub passed: bool,
    /// Human-readable lines.
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
    pub config_hash: String,
}

/// Runs the configured mode, writing outputs under `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    let mode = cfg.mode.ok_or_else(|| Error::Config {
        key: "mode".into(),
        message: "no mode given".into(),
    })?;
    let mut o = Output::create(out, cfg.hash())?;
    o.json("config.json", cfg)?;
    let (passed, summary) = match mode {
        Mode::Simulate => simulate::simulate(cfg, &mut o)?,
        Mode::Analyze => simulate::analyze(cfg, &mut o)?,
        Mode::Kinetic => meso::kinetic(cfg, &mut o)?,
        Mode::Compare => meso::compare(cfg, &mut o)?,
        Mode::Verify => verify::verify(cfg, &mut o)?,
    };
    Ok(Outcome {
        mode,
        passed,
        summary,
        files: o.files,
        config_hash: o.hash,
    })
}
