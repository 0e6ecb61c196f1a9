//! Run configurations: one JSON document per run, merged over defaults,
//! then dotted `key=value` overrides, then `--seed`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use devnoise_core::experiments::{CalibrationConfig, EnergySweepConfig, RegressionConfig};
use devnoise_core::inverse_sampler::DEFAULT_DEGREE;
use devnoise_core::mle_fit::FitConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CliError, Result};
use crate::formats::{BaseSpec, DeviceSpec, SwapSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    QuadStudy,
    SamplerStudy,
    Energy,
    Regression,
    Calibrate,
}

impl Command {
    pub const ALL: [Command; 6] = [Self::Fit, Self::QuadStudy, Self::SamplerStudy, Self::Energy, Self::Regression, Self::Calibrate];

    pub fn name(self) -> &'static str {
        match self {
            Self::Fit => "fit",
            Self::QuadStudy => "quad-study",
            Self::SamplerStudy => "sampler-study",
            Self::Energy => "energy",
            Self::Regression => "regression",
            Self::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| CliError::UnknownCommand(s.into()))
    }
}

/// A command's configuration. The top-level `seed` is the only source of
/// randomness; it is copied into every nested seed before the run.
pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn seed(&self) -> u64;
    fn propagate_seed(&mut self);
    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitRunConfig {
    pub seed: u64,
    /// One-column sample CSV; `--samples` takes precedence.
    pub samples: Option<PathBuf>,
    pub fit: FitConfig,
}

impl Default for FitRunConfig {
    fn default() -> Self {
        Self { seed: 0, samples: None, fit: FitConfig::default() }
    }
}

impl RunConfig for FitRunConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {
        self.fit.seed = self.seed;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadStudyConfig {
    pub seed: u64,
    pub device: DeviceSpec,
    /// Points per piece for the piecewise rules, total points for Gauss–Legendre.
    pub orders: Vec<usize>,
}

impl Default for QuadStudyConfig {
    fn default() -> Self {
        Self { seed: 0, device: DeviceSpec::mtj(), orders: (2..=24).collect() }
    }
}

impl RunConfig for QuadStudyConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {}

    fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(CliError::MalformedConfig("orders must be non-empty and positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerStudyConfig {
    pub seed: u64,
    pub device: DeviceSpec,
    pub degree: usize,
    /// Cumulative sample counts; must be nondecreasing.
    pub counts: Vec<usize>,
}

impl Default for SamplerStudyConfig {
    fn default() -> Self {
        Self { seed: 0, device: DeviceSpec::mtj(), degree: DEFAULT_DEGREE, counts: vec![1_000, 10_000, 100_000, 1_000_000] }
    }
}

impl RunConfig for SamplerStudyConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {}

    fn validate(&self) -> Result<()> {
        if self.counts.is_empty() || self.counts.contains(&0) {
            return Err(CliError::MalformedConfig("counts must be non-empty and positive".into()));
        }
        Ok(())
    }
}

/// Device (MTJ), bimodal and ECRAM swaps.
pub fn default_swaps() -> Vec<SwapSpec> {
    vec![
        SwapSpec::new("device", BaseSpec::device(DeviceSpec::mtj())),
        SwapSpec::new("bimodal", BaseSpec::bimodal()),
        SwapSpec::new("ecram", BaseSpec::device(DeviceSpec::ecram())),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyRunConfig {
    pub seed: u64,
    pub sweep: EnergySweepConfig,
    pub swaps: Vec<SwapSpec>,
    /// Write the predictive samples behind every KL estimate.
    pub save_predictive: bool,
    /// Worker threads for the cells; `None` uses every core.
    pub threads: Option<usize>,
}

impl Default for EnergyRunConfig {
    fn default() -> Self {
        Self { seed: 0, sweep: EnergySweepConfig::default(), swaps: default_swaps(), save_predictive: false, threads: None }
    }
}

impl RunConfig for EnergyRunConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {
        self.sweep.seed = self.seed;
    }

    fn validate(&self) -> Result<()> {
        Ok(self.sweep.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionRunConfig {
    pub seed: u64,
    pub regression: RegressionConfig,
    pub swaps: Vec<SwapSpec>,
    /// Write the generated train and test sets.
    pub save_data: bool,
}

impl Default for RegressionRunConfig {
    fn default() -> Self {
        Self { seed: 0, regression: RegressionConfig::default(), swaps: default_swaps()[..2].to_vec(), save_data: false }
    }
}

fn propagate_regression(cfg: &mut RegressionConfig, seed: u64) {
    cfg.seed = seed;
    cfg.mle.seed = seed;
    cfg.vi.seed = seed;
}

impl RunConfig for RegressionRunConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {
        propagate_regression(&mut self.regression, self.seed);
    }

    fn validate(&self) -> Result<()> {
        Ok(self.regression.validate()?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateRunConfig {
    pub seed: u64,
    /// Training recipe, and the test set the curves are measured on.
    pub regression: RegressionConfig,
    pub calibration: CalibrationConfig,
    pub swaps: Vec<SwapSpec>,
    /// Trained model from `regression`; trains afresh when absent.
    pub checkpoint: Option<PathBuf>,
}

impl Default for CalibrateRunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            regression: RegressionConfig::default(),
            calibration: CalibrationConfig::default(),
            swaps: default_swaps()[..2].to_vec(),
            checkpoint: None,
        }
    }
}

impl RunConfig for CalibrateRunConfig {
    fn seed(&self) -> u64 {
        self.seed
    }

    fn propagate_seed(&mut self) {
        propagate_regression(&mut self.regression, self.seed);
        self.calibration.seed = self.seed;
    }

    fn validate(&self) -> Result<()> {
        Ok(self.regression.validate()?)
    }
}

/// Recursively merges `patch` into `base`; non-object values replace.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`. The value is read as JSON, else as a string.
/// Numeric segments index arrays; intermediate keys must already exist.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let bad = |m: &str| CliError::MalformedConfig(format!("override {assignment:?}: {m}"));
    let (path, raw) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad("empty key segment"));
    }
    let (last, parents) = segments.split_last().expect("split yields a segment");
    let mut node = doc;
    for seg in parents {
        node = match node {
            Value::Object(m) => m.get_mut(*seg).ok_or_else(|| bad(&format!("no key {seg:?}")))?,
            Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or_else(|| bad(&format!("no index {seg:?}")))?,
            _ => return Err(bad(&format!("{seg:?} is not inside an object or array"))),
        };
    }
    match node {
        Value::Object(m) => {
            m.insert((*last).into(), value);
        }
        Value::Array(a) => {
            let slot = last.parse::<usize>().ok().and_then(|i| a.get_mut(i)).ok_or_else(|| bad(&format!("no index {last:?}")))?;
            *slot = value;
        }
        _ => return Err(bad(&format!("{last:?} is not inside an object or array"))),
    }
    Ok(())
}

/// Reads a config file, checking and stripping its `"command"` field.
pub fn read_config_file(path: &Path, command: Command) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| CliError::MalformedConfig(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(CliError::MalformedConfig(format!("{}: expected a JSON object", path.display())));
    };
    match map.remove("command") {
        None => {}
        Some(Value::String(name)) => {
            let found: Command = name.parse()?;
            if found != command {
                return Err(CliError::CommandMismatch { expected: command.name().into(), found: name });
            }
        }
        Some(other) => return Err(CliError::MalformedConfig(format!("\"command\" must be a string, got {other}"))),
    }
    Ok(map)
}

/// Resolves the effective configuration of one run.
pub fn load_config<T: RunConfig>(command: Command, config_path: Option<&Path>, seed: Option<u64>, overrides: &[String]) -> Result<T> {
    let mut doc = serde_json::to_value(T::default()).expect("defaults serialize");
    if let Some(path) = config_path {
        merge(&mut doc, Value::Object(read_config_file(path, command)?));
    }
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    if let Some(seed) = seed {
        doc["seed"] = seed.into();
    }
    let mut cfg: T = serde_json::from_value(doc).map_err(|e| CliError::MalformedConfig(e.to_string()))?;
    cfg.propagate_seed();
    cfg.validate().map_err(|e| match e {
        CliError::Compute(inner) => CliError::MalformedConfig(inner.to_string()),
        other => other,
    })?;
    Ok(cfg)
}
