use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{presets, Mode};
use crate::configuration::{AxisBox, Position, TorusWindow};
use crate::dynamics::{InitialCondition, RunOptions, DEFAULT_EVENT_CAP};
use crate::error::{Error, Result};
use crate::kernels::{CosineMode, Kernel, ModelParams};
use crate::kinetic::SourceTerm;

fn config_err(key: &str, message: impl ToString) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Zero,
    Tophat,
    Gaussian,
    Exponential,
    /// Background level with an optional cosine modulation.
    Constant,
}

/// One kernel. Interaction kernels take `scale` and exactly one of
/// `amplitude` or `mass` (the L¹ norm); backgrounds take `amplitude` as the level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_cut: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulation: Option<CosineMode>,
}

impl KernelSpec {
    pub fn build(&self, d: usize, key: &str) -> Result<Kernel> {
        let err = |e: Error| config_err(key, e);
        match self.family {
            KernelFamily::Zero => Kernel::zero(d).map_err(err),
            KernelFamily::Constant => {
                if self.mass.is_some() || self.scale.is_some() {
                    return Err(config_err(key, "a constant background takes only `amplitude` and `modulation`"));
                }
                Kernel::background(self.amplitude.unwrap_or(0.0), self.modulation, d).map_err(err)
            }
            family => {
                if self.modulation.is_some() {
                    return Err(config_err(key, "only constant backgrounds accept `modulation`"));
                }
                let scale = self.scale.ok_or_else(|| config_err(key, "missing `scale`"))?;
                let make = |amp: f64| match family {
                    KernelFamily::Tophat => Kernel::tophat(amp, scale, d),
                    KernelFamily::Gaussian => Kernel::gaussian(amp, scale, d),
                    _ => Kernel::exponential(amp, scale, d),
                };
                let amplitude = match (self.amplitude, self.mass) {
                    (Some(a), None) => a,
                    (None, Some(m)) => m / make(1.0).map_err(err)?.l1_norm().map_err(err)?,
                    _ => return Err(config_err(key, "give exactly one of `amplitude` and `mass`")),
                };
                let k = make(amplitude).map_err(err)?;
                match self.eps_cut {
                    Some(eps) => k.with_eps_cut(eps).map_err(err),
                    None => Ok(k),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dimension: usize,
    pub side: f64,
    pub a_plus: KernelSpec,
    pub a_minus: KernelSpec,
    pub b_plus: KernelSpec,
    pub b_minus: KernelSpec,
}

impl ModelSpec {
    pub fn window(&self) -> Result<TorusWindow> {
        TorusWindow::new(self.side, self.dimension).map_err(|e| config_err("model.side", e))
    }

    pub fn params(&self) -> Result<ModelParams> {
        let d = self.dimension;
        let window = self.window()?;
        ModelParams::new(
            self.a_plus.build(d, "model.a_plus")?,
            self.a_minus.build(d, "model.a_minus")?,
            self.b_plus.build(d, "model.b_plus")?,
            self.b_minus.build(d, "model.b_minus")?,
            window,
        )
        .map_err(|e| config_err("model", e))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    #[default]
    Empty,
    Poisson {
        kappa: f64,
    },
    Points {
        points: Vec<Vec<f64>>,
    },
}

impl InitialSpec {
    pub fn condition(&self, d: usize) -> Result<InitialCondition> {
        Ok(match self {
            InitialSpec::Empty => InitialCondition::Empty,
            InitialSpec::Poisson { kappa } => {
                if !(*kappa >= 0.0) || !kappa.is_finite() {
                    return Err(config_err("run.initial.kappa", "must be finite and >= 0"));
                }
                InitialCondition::Poisson { kappa: *kappa }
            }
            InitialSpec::Points { points } => {
                let mut out = Vec::with_capacity(points.len());
                for p in points {
                    if p.len() != d {
                        return Err(config_err("run.initial.points", format!("expected {d} coordinates per point")));
                    }
                    let mut x = Position::origin();
                    x.0[..d].copy_from_slice(p);
                    out.push(x);
                }
                InitialCondition::Points { points: out }
            }
        })
    }

    /// Expected initial density.
    pub fn density(&self, window: &TorusWindow) -> f64 {
        match self {
            InitialSpec::Empty => 0.0,
            InitialSpec::Poisson { kappa } => *kappa,
            InitialSpec::Points { points } => points.len() as f64 / window.volume(),
        }
    }
}

fn default_event_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub t_end: f64,
    /// Observation times; `[t_end]` when empty.
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    pub replicates: u64,
    pub master_seed: u64,
    #[serde(default = "default_event_cap")]
    pub event_cap: u64,
    /// Worker threads; 0 uses every logical core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub record_events: bool,
}

impl RunSpec {
    pub fn times(&self) -> Vec<f64> {
        let mut t = if self.snapshot_times.is_empty() {
            vec![self.t_end]
        } else {
            self.snapshot_times.clone()
        };
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            t_end: self.t_end,
            snapshot_times: self.times(),
            event_cap: self.event_cap,
            record_events: self.record_events,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(config_err("run.t_end", "must be finite and >= 0"));
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) {
            return Err(config_err("run.snapshot_times", "every time must lie in [0, t_end]"));
        }
        if self.replicates == 0 {
            return Err(config_err("run.replicates", "must be >= 1"));
        }
        if self.event_cap == 0 {
            return Err(config_err("run.event_cap", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

fn default_n_max() -> usize {
    6
}

fn default_confidence() -> f64 {
    0.95
}

fn default_resamples() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    /// Probe boxes; a centred box of half the window side when empty.
    #[serde(default)]
    pub probes: Vec<ProbeSpec>,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
    /// Upper pair-correlation radius; `L/2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    /// Pair-correlation bins; 0 skips the estimate.
    #[serde(default)]
    pub r_bins: usize,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    /// Directory holding `snapshots.csv` and `populations.csv` for `analyze`;
    /// the output directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        AnalysisSpec {
            probes: Vec::new(),
            n_max: default_n_max(),
            confidence: default_confidence(),
            r_max: None,
            r_bins: 0,
            bootstrap_resamples: default_resamples(),
            input: None,
        }
    }
}

impl AnalysisSpec {
    pub fn probe_boxes(&self, window: &TorusWindow) -> Result<Vec<AxisBox>> {
        if self.probes.is_empty() {
            let side = window.side() / 2.0;
            return AxisBox::cube(side / 2.0, side, window.dimension()).map(|b| vec![b]);
        }
        self.probes
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let key = format!("analysis.probes[{i}]");
                if p.lo.len() != window.dimension() {
                    return Err(config_err(&key, "dimension differs from the model"));
                }
                let b = AxisBox::new(&p.lo, &p.hi).map_err(|e| config_err(&key, e))?;
                if !b.within(window) {
                    return Err(config_err(&key, "probe box leaves the window"));
                }
                Ok(b)
            })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(config_err("analysis.confidence", "must lie in (0, 1)"));
        }
        if self.n_max == 0 || self.n_max > 8 {
            return Err(config_err("analysis.n_max", "must lie in 1..=8"));
        }
        if self.bootstrap_resamples == 0 {
            return Err(config_err("analysis.bootstrap_resamples", "must be >= 1"));
        }
        Ok(())
    }
}

fn default_nodes() -> usize {
    64
}

fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticSpec {
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Defaults to `run.t_end`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    /// Defaults to the run's snapshot times.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    /// Defaults to the expected density of the run's initial condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_density: Option<f64>,
    /// Relative amplitude of a `cos(2π x₁ / L)` perturbation of the initial density.
    #[serde(default)]
    pub perturbation: f64,
    /// `proportional` for `kinetic`, `additive` for `compare` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTerm>,
    #[serde(default)]
    pub dump_fields: bool,
}

impl Default for KineticSpec {
    fn default() -> Self {
        KineticSpec {
            nodes: default_nodes(),
            dt: default_dt(),
            t_end: None,
            snapshot_times: None,
            initial_density: None,
            perturbation: 0.0,
            source: None,
            dump_fields: false,
        }
    }
}

impl KineticSpec {
    fn validate(&self) -> Result<()> {
        if self.nodes < 2 {
            return Err(config_err("kinetic.nodes", "must be >= 2"));
        }
        if !(self.dt > 0.0) {
            return Err(config_err("kinetic.dt", "must be positive"));
        }
        if !(self.perturbation.abs() <= 1.0) {
            return Err(config_err("kinetic.perturbation", "must lie in [-1, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "VerifySpec::default_seed")]
    pub seed: u64,
    #[serde(default = "VerifySpec::default_instances")]
    pub duality_instances: usize,
    #[serde(default = "VerifySpec::default_nodes")]
    pub quadrature_nodes: usize,
    #[serde(default = "VerifySpec::default_samples")]
    pub theta_samples: usize,
}

impl VerifySpec {
    fn default_seed() -> u64 {
        1
    }

    fn default_instances() -> usize {
        20
    }

    fn default_nodes() -> usize {
        10
    }

    fn default_samples() -> usize {
        10_000
    }
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            seed: Self::default_seed(),
            duality_instances: Self::default_instances(),
            quadrature_nodes: Self::default_nodes(),
            theta_samples: Self::default_samples(),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mode to run when none is given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default)]
    pub kinetic: KineticSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| config_err(raw, "override must look like key=value"))?;
    let key = key.trim();
    let path: Vec<String> = key.split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(config_err(key, "empty key segment"));
    }
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((path, parsed))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("path has at least one segment");
    let mut cur = table;
    for (i, seg) in parents.iter().enumerate() {
        let entry = cur.entry(seg.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(config_err(&path[..=i].join("."), "is not a table")),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Layers a preset, a TOML file, and `key=value` overrides, in that order.
    pub fn load(path: Option<&Path>, preset: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut table = toml::Table::new();
        if let Some(name) = preset {
            let text = presets::preset(name).ok_or_else(|| config_err("preset", format!("unknown preset `{name}`; known: {}", presets::NAMES.join(", "))))?;
            merge(&mut table, toml::from_str(text).map_err(|e| config_err("preset", e))?);
        }
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)?;
            let file: toml::Table = toml::from_str(&text).map_err(|e| config_err(&p.display().to_string(), e.message()))?;
            merge(&mut table, file);
        }
        for raw in overrides {
            let (path, value) = parse_override(raw)?;
            set_path(&mut table, &path, value)?;
        }
        Self::from_table(table)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(toml::from_str(text).map_err(|e| config_err("<input>", e.message()))?)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            config_err(&key, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if let Some(m) = &self.model {
            let params = m.params()?;
            if let Some(r) = &self.run {
                r.validate()?;
                r.initial.condition(m.dimension)?;
            }
            self.analysis.probe_boxes(params.window())?;
            if let Some(r_max) = self.analysis.r_max {
                if r_max > m.side / 2.0 || !(r_max > 0.0) {
                    return Err(config_err("analysis.r_max", "must lie in (0, L/2]"));
                }
            }
        } else if let Some(r) = &self.run {
            r.validate()?;
        }
        self.analysis.validate()?;
        self.kinetic.validate()?;
        Ok(())
    }

    pub fn model(&self) -> Result<&ModelSpec> {
        self.model.as_ref().ok_or_else(|| config_err("model", "required for this mode"))
    }

    pub fn run(&self) -> Result<&RunSpec> {
        self.run.as_ref().ok_or_else(|| config_err("run", "required for this mode"))
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("configuration serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }
}
