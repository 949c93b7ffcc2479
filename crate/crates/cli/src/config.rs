//! Run configuration file (TOML).

use std::path::{Path, PathBuf};

use acorn_core::loss::LossConfig;
use acorn_core::metrics::MetricsConfig;
use acorn_core::policy::PolicyConfig;
use acorn_core::sim::{ArmConfig, NoiseLevel};
use acorn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub episodes_per_condition: usize,
    /// Presets `eval` runs when `--noise` is not given.
    pub noise: Vec<NoiseLevel>,
    /// Training seeds used by `ablate`.
    pub seeds: Vec<u64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            episodes_per_condition: 100,
            noise: vec![NoiseLevel::None, NoiseLevel::Light, NoiseLevel::Normal, NoiseLevel::Heavy],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub count: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { count: 50 }
    }
}

/// Output locations, relative to `--out` unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub demos: PathBuf,
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            demos: "demos.jsonl".into(),
            checkpoints: "checkpoints".into(),
            logs: "logs".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: ArmConfig,
    pub demos: DemoConfig,
    pub policy: PolicyConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub metrics: MetricsConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> CliResult<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: origin.into(),
            message: e.message().replace('\n', " "),
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Core(acorn_core::Error::io(path, e)))?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self, origin: &Path) -> CliResult<()> {
        let bad = |message: String| CliError::Config {
            path: origin.into(),
            message,
        };
        self.env.validate()?;
        self.policy.clone().for_arm(&self.env)?;
        self.loss.validate()?;
        self.train.validate()?;
        if self.eval.episodes_per_condition == 0 {
            return Err(bad("eval.episodes_per_condition must be >= 1".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(bad("eval.seeds must not be empty".into()));
        }
        if self.demos.count == 0 {
            return Err(bad("demos.count must be >= 1".into()));
        }
        if !(self.metrics.tdl_c > 0.0) {
            return Err(bad("metrics.tdl_c must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Joins a configured path onto the output directory.
pub fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}
