//! The single config file: simulator parameters plus a `[session]` table.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use handover_core::config::{ConfigError, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SessionConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Invalid(#[from] ConfigError),
    #[error("invalid session setting: {0}")]
    Session(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionParams {
    /// Address the live server listens on.
    pub bind: SocketAddr,
    /// Trial logs and batch reports are written here.
    pub log_dir: PathBuf,
    /// Send every n-th snapshot; phase changes are always sent.
    pub decimation: u32,
}

impl Default for SessionParams {
    fn default() -> Self {
        SessionParams { bind: SocketAddr::from(([127, 0, 0, 1], 8765)), log_dir: PathBuf::from("logs"), decimation: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    #[serde(flatten)]
    pub sim: SimConfig,
    pub session: SessionParams,
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionConfigError> {
        self.sim.validate()?;
        if self.session.decimation == 0 {
            return Err(SessionConfigError::Session("decimation must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, SessionConfigError> {
        let cfg: SessionConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, SessionConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| SessionConfigError::Read { path: path.to_owned(), source })?;
        Self::from_toml(&text)
    }
}
