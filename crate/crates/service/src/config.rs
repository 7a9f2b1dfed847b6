use std::path::{Path, PathBuf};

use booktree_core::backend::{BackendConfig, TemperatureDefaults};
use booktree_core::feedback::TimeModel;
use booktree_core::TokenBudget;
use serde::{Deserialize, Serialize};

pub const STORE_ENV: &str = "BOOKTREE_STORE";
pub const BIND_ENV: &str = "BOOKTREE_BIND";
pub const AUTH_TOKEN_ENV: &str = "BOOKTREE_AUTH_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub bind: String,
    pub store: PathBuf,
    /// Bearer token for mutating routes. Prefer the environment variable.
    pub auth_token: Option<String>,
    pub tokenizer: String,
    pub budget: TokenBudget,
    pub backend: BackendConfig,
    pub temperatures: TemperatureDefaults,
    pub time_model: TimeModel,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            store: PathBuf::from("booktree-data"),
            auth_token: None,
            tokenizer: "heuristic".into(),
            budget: TokenBudget::default(),
            backend: BackendConfig::default(),
            temperatures: TemperatureDefaults::default(),
            time_model: TimeModel::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl Config {
    /// Reads a TOML file (or defaults when `path` is None) and applies
    /// environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_owned(),
                    source,
                })?;
                Self::from_toml(&raw).map_err(|source| ConfigError::Parse {
                    path: p.to_owned(),
                    source,
                })?
            }
            None => Self::default(),
        };
        config.apply_env();
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(raw: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(raw)
    }

    fn apply_env(&mut self) {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        if let Some(store) = var(STORE_ENV) {
            self.store = store.into();
        }
        if let Some(bind) = var(BIND_ENV) {
            self.bind = bind;
        }
        if let Some(token) = var(AUTH_TOKEN_ENV) {
            self.auth_token = Some(token);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.budget
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.backend
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.time_model.validate().map_err(ConfigError::Invalid)?;
        booktree_core::tokenizer_by_name(&self.tokenizer)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = Config::from_toml(
            r#"
            bind = "0.0.0.0:9000"
            [backend]
            kind = "remote"
            endpoint = "http://localhost:5000/v1/completions"
            retries = 5
            [backend.fields]
            text_path = "output.text"
            [temperatures]
            rl = 0.1
            "#,
        )
        .unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.backend.retries, 5);
        assert_eq!(c.backend.fields.text_path, "output.text");
        assert_eq!(c.backend.fields.prompt_field, "prompt");
        assert_eq!(c.temperatures.rl, 0.1);
        assert_eq!(c.temperatures.bc_small, 0.6);
        assert_eq!(c.budget, TokenBudget::default());
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_budget() {
        let c = Config::from_toml("[budget]\ncontext_window = 100\nsummary_limit_by_height = { 0 = 128 }\nleaf_input_target = 600\ncompression_target = [5.0, 10.0]\n").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn example_file_is_valid() {
        let raw = include_str!("../../../booktree.example.toml");
        let c = Config::from_toml(raw).unwrap();
        c.validate().unwrap();
        assert_eq!(c.budget, TokenBudget::default());
        assert_eq!(c.temperatures, TemperatureDefaults::default());
        assert_eq!(c.backend.extra_body["model"], "summarizer");
    }
}
