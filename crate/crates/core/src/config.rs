//! Deployment configuration for `serve`.
//!
//! One TOML file with an optional `[study]` table; port, data directory,
//! token and study seed can be overridden through `PEERSTEP_PORT`,
//! `PEERSTEP_DATA_DIR`, `PEERSTEP_TOKEN` and `PEERSTEP_SEED`.
//!
//! ```toml
//! port = 8080
//! data_dir = "data"
//! token = "change-me"
//! attribute_pool = "pool.toml"   # optional
//!
//! [study]
//! seed = 42
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::AttributePool;
use crate::protocol::StudyConfig;

pub const ENV_PORT: &str = "PEERSTEP_PORT";
pub const ENV_DATA_DIR: &str = "PEERSTEP_DATA_DIR";
pub const ENV_TOKEN: &str = "PEERSTEP_TOKEN";
pub const ENV_SEED: &str = "PEERSTEP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    /// Static bearer token; `None` disables the check.
    pub token: Option<String>,
    pub attribute_pool: Option<PathBuf>,
    pub study: StudyConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { port: 8080, data_dir: PathBuf::from("data"), token: None, attribute_pool: None, study: StudyConfig::default() }
    }
}

impl ServerConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.study.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Apply overrides from an environment snapshot. Taking a map rather than
    /// reading the process environment keeps this testable.
    pub fn with_env(mut self, env: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(v) = env.get(ENV_PORT) {
            self.port = v.parse().map_err(|_| Error::Config(format!("{ENV_PORT}: invalid port `{v}`")))?;
        }
        if let Some(v) = env.get(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = env.get(ENV_TOKEN) {
            self.token = (!v.is_empty()).then(|| v.clone());
        }
        if let Some(v) = env.get(ENV_SEED) {
            self.study.seed = v.parse().map_err(|_| Error::Config(format!("{ENV_SEED}: invalid seed `{v}`")))?;
        }
        Ok(self)
    }

    pub fn pool(&self) -> Result<AttributePool> {
        match &self.attribute_pool {
            Some(p) => AttributePool::load(p),
            None => Ok(AttributePool::default()),
        }
    }

    pub fn events_path(&self) -> PathBuf {
        self.data_dir.join("events.jsonl")
    }
}

/// Our variables only, so nothing else from the environment leaks in.
pub fn env_snapshot() -> BTreeMap<String, String> {
    [ENV_PORT, ENV_DATA_DIR, ENV_TOKEN, ENV_SEED]
        .into_iter()
        .filter_map(|k| std::env::var(k).ok().map(|v| (k.to_string(), v)))
        .collect()
}
