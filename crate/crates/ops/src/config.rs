//! Service configuration, read from TOML.
//!
//! ```toml
//! listen = "127.0.0.1:7420"
//! data_dir = "data"
//! timezone = "Europe/London"
//! time_scale = 60.0
//!
//! [battery]
//! low = 0.2
//! resume = 0.9
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ronda_core::{BatteryMonitor, CoreConfig, LocalizerParams, Timestamp};
use serde::{Deserialize, Serialize};

use crate::OpsError;

/// Environment variable that overrides `data_dir`.
pub const DATA_DIR_ENV: &str = "RONDA_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub listen: String,
    /// Relative paths are taken from the config file's directory.
    pub data_dir: PathBuf,
    pub timezone: String,
    /// Simulated seconds per real second.
    pub time_scale: f64,
    /// Simulated start instant; the current time when absent.
    pub start_time: Option<Timestamp>,
    pub seed: u64,
    pub monitor_period_s: f64,
    pub monitor_backoff_s: f64,
    pub battery: BatteryConfig,
    pub localizer: LocalizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatteryConfig {
    pub enabled: bool,
    pub low: f64,
    pub resume: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerConfig {
    pub enabled: bool,
    pub params: LocalizerParams,
}

impl Default for Config {
    fn default() -> Self {
        let core = CoreConfig::default();
        Self {
            listen: "127.0.0.1:7420".into(),
            data_dir: "data".into(),
            timezone: core.timezone,
            time_scale: 1.0,
            start_time: None,
            seed: 0,
            monitor_period_s: core.monitor_period_s,
            monitor_backoff_s: core.monitor_backoff_s,
            battery: BatteryConfig::default(),
            localizer: LocalizerConfig::default(),
        }
    }
}

impl Default for BatteryConfig {
    fn default() -> Self {
        let m = BatteryMonitor::default();
        Self {
            enabled: true,
            low: m.threshold_low,
            resume: m.threshold_resume,
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, String> {
        let c: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        c.check()?;
        Ok(c)
    }

    /// Reads `path` and resolves `data_dir` against its directory.
    pub fn load(path: &Path) -> Result<Self, OpsError> {
        let text = fs::read_to_string(path).map_err(|e| OpsError::file(path, e))?;
        let mut c = Self::parse(&text).map_err(|e| OpsError::file(path, e))?;
        if c.data_dir.is_relative() {
            if let Some(dir) = path.parent() {
                c.data_dir = dir.join(&c.data_dir);
            }
        }
        Ok(c)
    }

    fn check(&self) -> Result<(), String> {
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(format!("time_scale must be positive, got {}", self.time_scale));
        }
        if !(self.monitor_period_s > 0.0) {
            return Err("monitor_period_s must be positive".into());
        }
        if self.battery.enabled {
            BatteryMonitor::new(self.battery.low, self.battery.resume)?;
        }
        ronda_core::schedule::parse_tz(&self.timezone).map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn core_config(&self) -> CoreConfig {
        CoreConfig {
            timezone: self.timezone.clone(),
            monitor_period_s: self.monitor_period_s,
            monitor_backoff_s: self.monitor_backoff_s,
        }
    }
}
