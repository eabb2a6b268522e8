//! Application configuration.
//!
//! A single optional TOML file supplies the endpoint, operational knobs, and
//! the per-model price table. Command-line flags override the file, and the
//! file overrides built-in defaults. The API key itself never appears here:
//! the file may only name the *environment variable* to read it from, and a
//! config that tries to embed a key is rejected outright.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::meter::{ModelPrice, PriceTable};

/// Where requests go when no endpoint is configured.
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
/// Environment variable consulted for the API key by default.
pub const DEFAULT_API_KEY_ENV: &str = "CORPUSCODER_API_KEY";
/// Per-request timeout when the file does not set one.
pub const DEFAULT_TIMEOUT_SECS: u64 = 60;
/// Pause enforced between request starts when the file does not set one.
pub const DEFAULT_MIN_INTERVAL_MS: u64 = 1000;

/// Built-in run defaults, used when neither flag nor file supplies a value.
pub const DEFAULT_WINDOW_TOKENS: u64 = 2000;
pub const DEFAULT_RESERVE_TOKENS: u64 = 256;
pub const DEFAULT_CONCURRENCY: usize = 1;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Toml {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error(
        "config {path} contains an `api_key` entry; keys are read only from \
         the environment — set `api_key_env` to name the variable instead"
    )]
    ApiKeyInConfig { path: String },
    #[error("invalid price for model '{model}': {detail}")]
    InvalidPrice { model: String, detail: String },
}

/// The parsed configuration file. Every field is optional; accessors fill in
/// the built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    /// Chat-completions URL, or a `mock://<script.json>` path for offline
    /// runs.
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub request_timeout_secs: Option<u64>,
    /// Minimum spacing between request starts, across all workers.
    pub min_request_interval_ms: Option<u64>,
    #[serde(default)]
    pub defaults: RunDefaults,
    /// Per-model price entries, in USD per 1 000 tokens.
    #[serde(default)]
    pub prices: BTreeMap<String, PriceConfig>,
}

/// The `[defaults]` section: run parameters used when no flag is given.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunDefaults {
    pub window_tokens: Option<u64>,
    pub reserve_tokens: Option<u64>,
    pub concurrency: Option<usize>,
    pub seed: Option<u64>,
    pub max_attempts: Option<u32>,
    /// Hard spend ceiling in USD; absent means unlimited.
    pub budget: Option<f64>,
}

/// One `[prices.<model>]` entry.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl AppConfig {
    /// Parse a config file, rejecting embedded keys and malformed prices.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: display.clone(),
            source,
        })?;
        Self::from_toml(&raw, &display)
    }

    /// Parse config text; `origin` is only used in error messages.
    pub fn from_toml(raw: &str, origin: &str) -> Result<Self, ConfigError> {
        // Check for embedded keys before strict field validation so the
        // user gets the pointed message, not a generic unknown-field error.
        let table: toml::Table = raw.parse().map_err(|source| ConfigError::Toml {
            path: origin.to_string(),
            source,
        })?;
        if table.contains_key("api_key") {
            return Err(ConfigError::ApiKeyInConfig {
                path: origin.to_string(),
            });
        }

        let config: AppConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|source| ConfigError::Toml {
                    path: origin.to_string(),
                    source,
                })?;
        for (model, price) in &config.prices {
            for (name, v) in [
                ("prompt_per_1k", price.prompt_per_1k),
                ("completion_per_1k", price.completion_per_1k),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return Err(ConfigError::InvalidPrice {
                        model: model.clone(),
                        detail: format!("{name} must be a finite non-negative number, got {v}"),
                    });
                }
            }
        }
        if let Some(budget) = config.defaults.budget {
            if !budget.is_finite() || budget < 0.0 {
                return Err(ConfigError::InvalidPrice {
                    model: "<defaults.budget>".to_string(),
                    detail: format!("budget must be a finite non-negative number, got {budget}"),
                });
            }
        }
        Ok(config)
    }

    pub fn endpoint(&self) -> &str {
        self.endpoint.as_deref().unwrap_or(DEFAULT_ENDPOINT)
    }

    pub fn api_key_env(&self) -> &str {
        self.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs.unwrap_or(DEFAULT_TIMEOUT_SECS))
    }

    pub fn min_request_interval(&self) -> Duration {
        Duration::from_millis(
            self.min_request_interval_ms
                .unwrap_or(DEFAULT_MIN_INTERVAL_MS),
        )
    }

    pub fn price_table(&self) -> PriceTable {
        let mut table = PriceTable::new();
        for (model, price) in &self.prices {
            table.insert(
                model.clone(),
                ModelPrice {
                    prompt_per_1k: price.prompt_per_1k,
                    completion_per_1k: price.completion_per_1k,
                },
            );
        }
        table
    }
}
