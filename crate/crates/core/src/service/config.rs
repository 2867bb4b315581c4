//! Service configuration: a TOML file located by `SCCI_CONFIG`, overridden by
//! command-line flags.
//!
//! ```toml
//! seed = 0
//! resolution = 64          # training resolution
//! epsilon = 0.05           # decolourization slack for training and sampling
//! active_threshold = 0.01  # fraction of the largest entry variance
//! max_upload_bytes = 8388608
//! addr = "127.0.0.1:8080"
//!
//! [post]
//! tau = 0.1
//! h_exponent = 2.0
//! enabled = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decolour::DEFAULT_EPSILON;
use crate::error::{Error, Result};
use crate::latent::DEFAULT_ACTIVE_THRESHOLD;
use crate::postprocess::PostConfig;

pub const CONFIG_ENV: &str = "SCCI_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub seed: u64,
    pub resolution: usize,
    pub epsilon: f64,
    pub active_threshold: f64,
    pub max_upload_bytes: usize,
    pub addr: String,
    pub post: PostConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            resolution: 64,
            epsilon: DEFAULT_EPSILON,
            active_threshold: DEFAULT_ACTIVE_THRESHOLD,
            max_upload_bytes: 8 << 20,
            addr: "127.0.0.1:8080".to_string(),
            post: PostConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Validation(format!("config file: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Load { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    /// The file named by `SCCI_CONFIG`, or defaults when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(p),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::Validation("resolution must be at least 4".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Validation("epsilon must be nonnegative".into()));
        }
        if !(self.active_threshold > 0.0 && self.active_threshold <= 1.0) {
            return Err(Error::Validation("active_threshold must be in (0, 1]".into()));
        }
        if self.max_upload_bytes == 0 {
            return Err(Error::Validation("max_upload_bytes must be positive".into()));
        }
        crate::postprocess::PostSettings::from_config(&self.post)?;
        Ok(())
    }
}
