//! TOML run configuration. A profile supplies the board preset; every other
//! key overrides one field of it. Unknown keys are rejected.
//!
//! ```toml
//! profile = "epiphany"        # epiphany | microblaze | custom
//! cores = 16
//! seed = 7
//! budgets = [8192, 8192]      # optional, one per core
//!
//! [core]
//! data_budget_bytes = 8192
//! ondemand_pool_bytes = 1024
//! clock_hz = 600e6
//! cycles_per_instruction = 50
//!
//! [timing]
//! alpha_ms = 0.02
//! beta_ms_per_byte = 1.1e-5
//! host_tier = 1.0
//! shared_tier = 0.6
//! poll_overhead_ms = 0.001
//! jitter = 0.0
//!
//! [output]
//! dir = "reports"
//! format = "both"             # csv | json | both
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::CoreConfig;
use crate::host::RuntimeConfig;
use crate::timing::TimingModel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 16 cores at 600 MHz, 8 KB of data memory each, 88 MB/s host link.
    #[default]
    Epiphany,
    /// 8 cores at 100 MHz, 40 KB of data memory each, 100 MB/s host link.
    Microblaze,
    /// Table-fitted timing and default cores; `cores` must be given.
    Custom,
}

impl Profile {
    pub fn core_count(self) -> Option<usize> {
        match self {
            Profile::Epiphany => Some(16),
            Profile::Microblaze => Some(8),
            Profile::Custom => None,
        }
    }

    pub fn core(self) -> CoreConfig {
        match self {
            Profile::Epiphany | Profile::Custom => CoreConfig::default(),
            Profile::Microblaze => CoreConfig {
                data_budget_bytes: 40 * 1024,
                clock_hz: 100e6,
                ..CoreConfig::default()
            },
        }
    }

    pub fn timing(self) -> TimingModel {
        match self {
            Profile::Epiphany => TimingModel::epiphany(),
            Profile::Microblaze => TimingModel::microblaze(),
            Profile::Custom => TimingModel::synthetic(),
        }
    }
}

impl FromStr for Profile {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "epiphany" => Ok(Profile::Epiphany),
            "microblaze" => Ok(Profile::Microblaze),
            "custom" => Ok(Profile::Custom),
            other => Err(ConfigError::Invalid(format!("unknown profile `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoreOverrides {
    pub data_budget_bytes: Option<usize>,
    pub ondemand_pool_bytes: Option<usize>,
    pub clock_hz: Option<f64>,
    pub cycles_per_instruction: Option<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingOverrides {
    pub alpha_ms: Option<f64>,
    pub beta_ms_per_byte: Option<f64>,
    pub host_tier: Option<f64>,
    pub shared_tier: Option<f64>,
    pub poll_overhead_ms: Option<f64>,
    pub jitter: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

impl FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(ConfigError::Invalid(format!("unknown output format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub profile: Profile,
    pub cores: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    /// Per-core data budgets in bytes, overriding `core.data_budget_bytes`.
    pub budgets: Option<Vec<usize>>,
    pub log_requests: Option<bool>,
    #[serde(default)]
    pub core: CoreOverrides,
    #[serde(default)]
    pub timing: TimingOverrides,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.runtime_config()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn core_count(&self) -> Result<usize, ConfigError> {
        let n = self
            .cores
            .or(self.profile.core_count())
            .ok_or_else(|| ConfigError::Invalid("the custom profile needs `cores`".into()))?;
        if n == 0 {
            return Err(ConfigError::Invalid("`cores` must be at least 1".into()));
        }
        Ok(n)
    }

    pub fn timing_model(&self) -> TimingModel {
        let mut t = self.profile.timing();
        let o = &self.timing;
        set(&mut t.alpha_ms, o.alpha_ms);
        set(&mut t.beta_ms_per_byte, o.beta_ms_per_byte);
        set(&mut t.host_tier, o.host_tier);
        set(&mut t.shared_tier, o.shared_tier);
        set(&mut t.poll_overhead_ms, o.poll_overhead_ms);
        set(&mut t.jitter, o.jitter);
        t
    }

    pub fn core_template(&self) -> CoreConfig {
        let mut c = self.profile.core();
        let o = &self.core;
        set(&mut c.data_budget_bytes, o.data_budget_bytes);
        set(&mut c.ondemand_pool_bytes, o.ondemand_pool_bytes);
        set(&mut c.clock_hz, o.clock_hz);
        set(&mut c.cycles_per_instruction, o.cycles_per_instruction);
        c
    }

    /// Builds and validates the runtime configuration this file describes.
    pub fn runtime_config(&self) -> Result<RuntimeConfig, ConfigError> {
        let n = self.core_count()?;
        let mut rc = RuntimeConfig::uniform(n, self.core_template(), self.timing_model());
        if let Some(budgets) = &self.budgets {
            if budgets.len() != n {
                return Err(ConfigError::Invalid(format!(
                    "`budgets` lists {} entries for {n} cores",
                    budgets.len()
                )));
            }
            for (core, &b) in rc.cores.iter_mut().zip(budgets) {
                core.data_budget_bytes = b;
            }
        }
        rc.jitter_seed = self.seed;
        if let Some(log) = self.log_requests {
            rc.log_requests = log;
        }
        rc.validate().map_err(ConfigError::Invalid)?;
        Ok(rc)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}
