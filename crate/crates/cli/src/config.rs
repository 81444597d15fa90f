//! Experiment configuration: one TOML file, optionally patched with `--set key=value`.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use volterra_branching::branching::BranchingLaw;
use volterra_branching::kernel::KernelSpec;
use volterra_branching::lln::{BSchedule, ConditionSettings};
use volterra_branching::sim::{load_memory, Memory, SimConfig, DEFAULT_MAX_PARTICLES};
use volterra_branching::test_function::TestFunction;

/// A configuration problem; the CLI exits with status 2.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid<T>(msg: impl Into<String>) -> Result<T, InvalidInput> {
    Err(InvalidInput(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    pub branching: BranchingLaw,
    pub simulation: SimulationSection,
    #[serde(default)]
    pub test_functions: Vec<TestFunction>,
    #[serde(default)]
    pub lln: LlnSection,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub hurst: f64,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default = "one_usize")]
    pub dim: usize,
    /// Times for the `kernel` table; twenty points up to the horizon by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_times: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub grid_dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_dt: Option<f64>,
    pub horizon: f64,
    /// Defaults to the horizon alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
    #[serde(default)]
    pub memory_length: f64,
    /// Driving increments of a fixed memory on `[0, memory_length)`: one line per
    /// grid cell with `dim` numbers separated by commas or whitespace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_max")]
    pub max_particles: usize,
    #[serde(default = "one_u64")]
    pub replicates: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub threads: Threads,
    #[serde(default = "yes")]
    pub track_positions: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Threads {
    Count(usize),
    Keyword(ThreadsKeyword),
}

impl Default for Threads {
    fn default() -> Self {
        Self::Keyword(ThreadsKeyword::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThreadsKeyword {
    Auto,
}

impl Threads {
    /// Requested worker count; `None` lets rayon decide.
    pub fn count(self) -> Option<usize> {
        match self {
            Self::Count(n) if n > 0 => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnSection {
    /// Separation schedule; `√t` for μ ≥ 0 and `t^δ` for μ < 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<BSchedule>,
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub series_terms: Option<usize>,
    /// Threshold ε for the path-oscillation series.
    #[serde(default = "half")]
    pub eps: f64,
    /// Number of `[t_n, t_{n+1}]` intervals to estimate; 0 skips the simulation.
    #[serde(default)]
    pub pmax_intervals: u64,
    #[serde(default = "hundred")]
    pub pmax_paths: u64,
}

impl Default for LlnSection {
    fn default() -> Self {
        Self { b: None, kappa: 0.5, probes: None, series_terms: None, eps: 0.5, pmax_intervals: 0, pmax_paths: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Allowed relative error of the final ratio mean against `Tf`.
    #[serde(default = "five_percent")]
    pub ratio_relative: f64,
    /// Monte Carlo checks pass within this many standard errors.
    #[serde(default = "three")]
    pub mc_sigmas: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { ratio_relative: 0.05, mc_sigmas: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_dir() }
    }
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn one_u64() -> u64 {
    1
}
fn half() -> f64 {
    0.5
}
fn hundred() -> u64 {
    100
}
fn three() -> f64 {
    3.0
}
fn five_percent() -> f64 {
    0.05
}
fn yes() -> bool {
    true
}
fn default_max() -> usize {
    DEFAULT_MAX_PARTICLES
}
fn default_dir() -> PathBuf {
    PathBuf::from("vbsim-out")
}

/// Parse `key.path=value`; the value is read as a TOML value and falls back to a string.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), InvalidInput> {
    let Some((key, raw)) = spec.split_once('=') else {
        return invalid(format!("--set expects key=value, got `{spec}`"));
    };
    let key = key.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return invalid(format!("--set has an empty key segment in `{key}`"));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => return invalid(format!("--set {key}: `{part}` is not a section")),
        };
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, InvalidInput> {
        // Parse the file on its own first so that errors carry its line numbers.
        let base: Self = toml::from_str(text).map_err(|e| InvalidInput(format!("config: {e}")))?;
        let cfg = if overrides.is_empty() {
            base
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| InvalidInput(format!("config: {e}")))?;
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            toml::Value::Table(table).try_into().map_err(|e| InvalidInput(format!("config after --set: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, InvalidInput> {
        let text = std::fs::read_to_string(path).map_err(|e| InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)?;
        // Relative memory files are resolved next to the config.
        if let Some(m) = &cfg.simulation.memory_file {
            if m.is_relative() {
                cfg.simulation.memory_file = Some(path.parent().unwrap_or(Path::new(".")).join(m));
            }
        }
        if let Some(m) = &cfg.simulation.memory_file {
            if !m.exists() {
                return invalid(format!("simulation.memory_file {} does not exist", m.display()));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), InvalidInput> {
        let k = &self.kernel;
        if !(k.hurst > 0.0 && k.hurst < 1.0) {
            return invalid(format!("kernel.hurst must lie in (0, 1), got {}", k.hurst));
        }
        if !(k.lambda > 0.0 && k.lambda.is_finite()) {
            return invalid(format!("kernel.lambda must be positive, got {}", k.lambda));
        }
        if !k.mu.is_finite() {
            return invalid("kernel.mu must be finite");
        }
        if k.dim == 0 {
            return invalid("kernel.dim must be at least 1");
        }
        if let Some(ts) = &k.table_times {
            if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return invalid("kernel.table_times must be nonempty and positive");
            }
        }
        let s = &self.simulation;
        if !(s.grid_dt > 0.0 && s.grid_dt.is_finite()) {
            return invalid(format!("simulation.grid_dt must be positive, got {}", s.grid_dt));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return invalid(format!("simulation.horizon must be positive, got {}", s.horizon));
        }
        if !(s.memory_length >= 0.0 && s.memory_length <= s.horizon) {
            return invalid(format!("simulation.memory_length must lie in [0, horizon], got {}", s.memory_length));
        }
        if s.replicates == 0 {
            return invalid("simulation.replicates must be at least 1");
        }
        if s.max_particles == 0 {
            return invalid("simulation.max_particles must be at least 1");
        }
        if let Some(x0) = &s.x0 {
            if x0.len() != k.dim {
                return invalid(format!("simulation.x0 has {} coordinates, kernel.dim is {}", x0.len(), k.dim));
            }
        }
        for (i, f) in self.test_functions.iter().enumerate() {
            f.validate(k.dim).map_err(|e| InvalidInput(format!("test_functions[{i}]: {e}")))?;
        }
        let l = &self.lln;
        if let Some(b) = &l.b {
            b.validate().map_err(|e| InvalidInput(format!("lln.b: {e}")))?;
        }
        if !(l.kappa > 0.0 && l.kappa < 1.0) {
            return invalid(format!("lln.kappa must lie in (0, 1), got {}", l.kappa));
        }
        if !(l.eps > 0.0) {
            return invalid(format!("lln.eps must be positive, got {}", l.eps));
        }
        if !(self.tolerances.ratio_relative > 0.0) || !(self.tolerances.mc_sigmas > 0.0) {
            return invalid("tolerances must be positive");
        }
        // Grid alignment and the remaining cross-field rules.
        self.sim_config().and_then(|c| volterra_branching::sim::Simulator::new(&c).map(|_| ())).map_err(|e| InvalidInput(format!("simulation: {e}")))?;
        self.condition_settings().validate().map_err(|e| InvalidInput(format!("lln: {e}")))?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec { hurst: self.kernel.hurst, mu: self.kernel.mu, lambda: self.kernel.lambda, dim: self.kernel.dim }
    }

    pub fn x0(&self) -> Vec<f64> {
        self.simulation.x0.clone().unwrap_or_else(|| vec![0.0; self.kernel.dim])
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        self.simulation.snapshot_times.clone().unwrap_or_else(|| vec![self.simulation.horizon])
    }

    pub fn sim_config(&self) -> volterra_branching::Result<SimConfig> {
        let s = &self.simulation;
        let mut cfg = SimConfig::new(KernelSpec::new(self.kernel.hurst, self.kernel.mu, self.kernel.lambda, self.kernel.dim)?, self.branching.clone(), s.grid_dt, s.horizon);
        cfg.x0 = self.x0();
        cfg.memory_length = s.memory_length;
        cfg.coupling_dt = s.coupling_dt;
        cfg.snapshot_times = self.snapshot_times();
        cfg.max_particles = s.max_particles;
        cfg.root_seed = s.seed;
        cfg.track_positions = s.track_positions;
        Ok(cfg)
    }

    pub fn condition_settings(&self) -> ConditionSettings {
        let kernel = self.kernel_spec();
        let mut c = ConditionSettings::default_for(&kernel);
        if let Some(b) = self.lln.b {
            c.b = b;
        }
        c.kappa = self.lln.kappa;
        c.r = self.simulation.memory_length;
        if let Some(p) = &self.lln.probes {
            c.probes = p.clone();
        }
        if let Some(n) = self.lln.series_terms {
            c.series_terms = n;
        }
        c
    }

    pub fn memory(&self) -> anyhow::Result<Option<Memory>> {
        let Some(path) = &self.simulation.memory_file else {
            return Ok(None);
        };
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Result<Vec<f64>, _> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).map(str::parse).collect();
            rows.push(row.map_err(|e| InvalidInput(format!("{}:{}: {e}", path.display(), i + 1)))?);
        }
        let m = load_memory(&rows, self.simulation.memory_length, self.simulation.grid_dt).map_err(|e| InvalidInput(format!("simulation.memory_file: {e}")))?;
        if m.dim != self.kernel.dim && !rows.is_empty() {
            return Err(InvalidInput(format!("simulation.memory_file has {} columns, kernel.dim is {}", m.dim, self.kernel.dim)).into());
        }
        Ok(Some(m))
    }

    /// The resolved configuration as embedded in artifacts. The thread count
    /// and output directory are left out: they do not affect any number.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(sim) = v.get_mut("simulation").and_then(|s| s.as_object_mut()) {
            sim.remove("threads");
        }
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output");
        }
        v
    }
}
