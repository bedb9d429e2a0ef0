//! Runtime configuration: JSON file merged over built-in defaults, then
//! environment overrides, then command-line flags (applied by the caller).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detectors::{default_registry, DetectorRegistry};
use crate::model::VulnClass;
use crate::pragma::parse_version;
use crate::stats::default_groups;

pub const ENV_RPC_ENDPOINT: &str = "EVMSCAN_RPC_ENDPOINT";
pub const ENV_EXPLORER_API_KEY: &str = "EVMSCAN_EXPLORER_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config file {path}: {detail}")]
    Unreadable { path: PathBuf, detail: String },
    #[error("config file {path}: {detail}")]
    Malformed { path: PathBuf, detail: String },
    #[error("config field {field}: {detail}")]
    Invalid { field: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key: String,
    /// Requests per second.
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Overrides on top of the built-in registry defaults.
    pub enabled: BTreeMap<String, bool>,
    /// Compiler versions below this count as outdated.
    pub pragma_floor: String,
    pub call_chain_depth: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            enabled: BTreeMap::new(),
            pragma_floor: "0.8.0".to_string(),
            call_chain_depth: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub data_dir: PathBuf,
    pub inputs_dir: PathBuf,
    pub tools_dir: PathBuf,
    pub rpc_endpoint: Option<String>,
    pub explorer: Option<ExplorerConfig>,
    pub parallelism: usize,
    pub detectors: DetectorConfig,
    /// Vulnerability class groupings used by the stats tables.
    pub stats_groups: BTreeMap<String, Vec<String>>,
}

impl Default for Config {
    fn default() -> Self {
        let stats_groups = default_groups()
            .into_iter()
            .map(|(name, classes)| {
                (
                    name,
                    classes.iter().map(|c| c.name().to_string()).collect(),
                )
            })
            .collect();
        Config {
            data_dir: PathBuf::from("data"),
            inputs_dir: PathBuf::from("data/inputs"),
            tools_dir: PathBuf::from("tools"),
            rpc_endpoint: None,
            explorer: None,
            parallelism: 4,
            detectors: DetectorConfig::default(),
            stats_groups,
        }
    }
}

impl Config {
    /// File (when given) over defaults, then environment, then validation.
    /// Flag overrides are the caller's job before `finalize`d values are used.
    pub fn load(path: Option<&Path>) -> Result<Config, ConfigError> {
        let mut config = match path {
            None => Config::default(),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Malformed {
                    path: path.to_path_buf(),
                    detail: e.to_string(),
                })?
            }
        };
        config.apply_env(|key| std::env::var(key).ok());
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = get(ENV_RPC_ENDPOINT) {
            self.rpc_endpoint = Some(endpoint);
        }
        if let Some(key) = get(ENV_EXPLORER_API_KEY) {
            match &mut self.explorer {
                Some(explorer) => explorer.api_key = key,
                None => log::warn!(
                    "{ENV_EXPLORER_API_KEY} set but no explorer is configured; ignoring"
                ),
            }
        }
    }

    /// Validates invariants and absolutizes paths.
    pub fn finalize(&mut self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError::Invalid {
                field: "parallelism".to_string(),
                detail: "must be at least 1".to_string(),
            });
        }
        for dir in [&mut self.data_dir, &mut self.inputs_dir, &mut self.tools_dir] {
            *dir = std::path::absolute(&dir).map_err(|e| ConfigError::Invalid {
                field: "paths".to_string(),
                detail: e.to_string(),
            })?;
        }
        self.detector_registry()?;
        self.resolved_stats_groups()?;
        Ok(())
    }

    /// The built-in registry with this config's overrides applied.
    pub fn detector_registry(&self) -> Result<DetectorRegistry, ConfigError> {
        let mut registry = default_registry();
        for (id, on) in &self.detectors.enabled {
            if !registry.set_enabled(id, *on) {
                return Err(ConfigError::Invalid {
                    field: format!("detectors.enabled.{id}"),
                    detail: "no such detector".to_string(),
                });
            }
        }
        registry.settings.pragma_floor =
            parse_version(&self.detectors.pragma_floor).map_err(|e| ConfigError::Invalid {
                field: "detectors.pragma_floor".to_string(),
                detail: e.to_string(),
            })?;
        registry.settings.call_chain_depth = self.detectors.call_chain_depth;
        Ok(registry)
    }

    pub fn resolved_stats_groups(&self) -> Result<BTreeMap<String, Vec<VulnClass>>, ConfigError> {
        let mut groups = BTreeMap::new();
        for (name, labels) in &self.stats_groups {
            let mut classes = Vec::new();
            for label in labels {
                let class =
                    VulnClass::from_label(label).ok_or_else(|| ConfigError::Invalid {
                        field: format!("stats_groups.{name}"),
                        detail: format!("unknown vulnerability class {label:?}"),
                    })?;
                classes.push(class);
            }
            groups.insert(name.clone(), classes);
        }
        Ok(groups)
    }
}
