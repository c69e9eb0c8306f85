//! Domain configuration: a TOML file of `key = value` pairs, overridable
//! per key through `VPKI_<KEY>` environment variables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::guard::FailPolicy;
use crate::ltca::LtcaConfig;
use crate::pca::PcaConfig;
use crate::ra::RaConfig;
use crate::records::StoreOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub domain_id: String,
    /// Pseudonym lifetime, seconds.
    pub tau_p: u64,
    /// Coverage granted per ticket, seconds.
    pub gamma: u64,
    pub freshness_window_s: u64,
    pub grace_s: u64,
    pub guard_policy: FailPolicy,
    pub ltca_workers: usize,
    pub pca_workers: usize,
    pub max_batch: usize,
    pub ra_rate_per_minute: u32,
    pub record_write_delay_ms: u64,
    /// `host:port` of a shared guard server; empty for an embedded guard.
    pub guard_addr: String,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            domain_id: "default".into(),
            tau_p: 300,
            gamma: 3600,
            freshness_window_s: 300,
            grace_s: 0,
            guard_policy: FailPolicy::FailClose,
            ltca_workers: 4,
            pca_workers: 4,
            max_batch: 1000,
            ra_rate_per_minute: 10,
            record_write_delay_ms: 0,
            guard_addr: String::new(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(String),
}

const ENV_PREFIX: &str = "VPKI_";

impl DomainConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with_env(text, std::iter::empty())
    }

    /// Parses `text`, then applies `VPKI_*` overrides from `env`.
    pub fn from_toml_with_env(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (k, v) in env {
            let Some(key) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let value = match v.parse::<i64>() {
                Ok(n) => toml::Value::Integer(n),
                Err(_) => toml::Value::String(v),
            };
            table.insert(key.to_ascii_lowercase(), value);
        }
        let cfg: DomainConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path` (if given) and overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn ltca_config(&self, id: &str) -> LtcaConfig {
        let mut c = LtcaConfig::new(id);
        c.freshness_window_s = self.freshness_window_s;
        c.grace_s = self.grace_s;
        c.fail_policy = self.guard_policy;
        c.workers = self.ltca_workers;
        c
    }

    pub fn pca_config(&self, id: &str) -> PcaConfig {
        let mut c = PcaConfig::new(id, self.tau_p);
        c.max_batch = self.max_batch;
        c.freshness_window_s = self.freshness_window_s;
        c.fail_policy = self.guard_policy;
        c.workers = self.pca_workers;
        c
    }

    pub fn ra_config(&self, id: &str) -> RaConfig {
        let mut c = RaConfig::new(id);
        c.rate_per_minute = self.ra_rate_per_minute;
        c.freshness_window_s = self.freshness_window_s;
        c
    }

    pub fn store_options(&self) -> StoreOptions {
        StoreOptions {
            write_delay: std::time::Duration::from_millis(self.record_write_delay_ms),
            ..StoreOptions::default()
        }
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.tau_p == 0 || self.gamma < self.tau_p {
            return Err(ConfigError::Parse(format!(
                "need 0 < tau_p <= gamma, got tau_p={} gamma={}",
                self.tau_p, self.gamma
            )));
        }
        if self.ltca_workers == 0 || self.pca_workers == 0 {
            return Err(ConfigError::Parse("worker counts must be positive".into()));
        }
        Ok(())
    }
}
