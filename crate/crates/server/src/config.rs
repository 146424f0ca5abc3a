//! Server and CLI configuration, read from a TOML file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use shaderbreed_core::evolution::EvolveConfig;
use shaderbreed_core::glsl::{
    native_backend, AcceptingBackend, CompileBackend, EntryRequirement, UnavailableBackend,
    ValidationLimits,
};
use shaderbreed_core::operators::{ProviderConfig, ProviderSpec};
use shaderbreed_core::seeds;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("seed bank {path}: {message}")]
    SeedBank { path: PathBuf, message: String },
    #[error("invalid setting: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendChoice {
    #[default]
    Native,
    Accepting,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub population_size: usize,
    pub max_attempts: u32,
    pub temperature: f64,
    pub max_code_length: usize,
    pub required_entry: EntryRequirement,
    /// Directory of `*.glsl` seeds; the bundled bank when unset.
    pub seed_bank: Option<PathBuf>,
    pub session_dir: PathBuf,
    pub rng_seed: u64,
    pub concurrency: usize,
    pub compile_backend: BackendChoice,
    pub model: String,
    pub endpoint: String,
    pub credential_env: String,
    pub max_tokens: u32,
    pub prompt_token_budget: usize,
    pub provider: ProviderSpec,
}

impl Default for AppConfig {
    fn default() -> Self {
        let evolve = EvolveConfig::default();
        AppConfig {
            population_size: evolve.population_size,
            max_attempts: evolve.max_attempts,
            temperature: evolve.provider.temperature,
            max_code_length: evolve.limits.max_code_length,
            required_entry: evolve.limits.required_entry,
            seed_bank: None,
            session_dir: PathBuf::from("sessions"),
            rng_seed: 0,
            concurrency: evolve.concurrency,
            compile_backend: BackendChoice::Native,
            model: evolve.provider.model,
            endpoint: evolve.provider.endpoint,
            credential_env: evolve.provider.credential_env,
            max_tokens: evolve.provider.max_tokens,
            prompt_token_budget: evolve.provider.prompt_token_budget,
            provider: ProviderSpec::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        let cfg: AppConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_owned(),
            source,
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.population_size == 0 {
            return Err(ConfigError::Invalid("population_size must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(ConfigError::Invalid("max_attempts must be positive".into()));
        }
        if self.max_code_length == 0 {
            return Err(ConfigError::Invalid("max_code_length must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ConfigError::Invalid(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }

    pub fn evolve_config(&self, rng_seed: u64) -> EvolveConfig {
        EvolveConfig {
            population_size: self.population_size,
            max_attempts: self.max_attempts,
            provider: ProviderConfig {
                model: self.model.clone(),
                temperature: self.temperature,
                max_tokens: self.max_tokens,
                credential_env: self.credential_env.clone(),
                endpoint: self.endpoint.clone(),
                prompt_token_budget: self.prompt_token_budget,
            },
            limits: ValidationLimits {
                max_code_length: self.max_code_length,
                required_entry: self.required_entry,
            },
            rng_seed,
            concurrency: self.concurrency,
        }
    }

    pub fn load_seed_bank(&self) -> Result<Vec<String>, ConfigError> {
        match &self.seed_bank {
            None => Ok(seeds::builtin()),
            Some(dir) => {
                let bank = seeds::load_dir(dir).map_err(|e| ConfigError::SeedBank {
                    path: dir.clone(),
                    message: e.to_string(),
                })?;
                if bank.is_empty() {
                    return Err(ConfigError::SeedBank {
                        path: dir.clone(),
                        message: "no .glsl files".into(),
                    });
                }
                Ok(bank)
            }
        }
    }

    pub fn backend(&self) -> Arc<dyn CompileBackend> {
        match self.compile_backend {
            BackendChoice::Native => match native_backend() {
                Ok(b) => Arc::from(b),
                Err(_) => {
                    log::warn!("native compile backend unavailable; structural checks only");
                    Arc::new(UnavailableBackend)
                }
            },
            BackendChoice::Accepting => Arc::new(AcceptingBackend),
            BackendChoice::None => Arc::new(UnavailableBackend),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let cfg: AppConfig = toml::from_str(
            r#"
population_size = 8
temperature = 0.7
max_code_length = 4000
session_dir = "/tmp/s"

[provider]
kind = "mock"
seed = 3
failure_rate = 0.25
"#,
        )
        .unwrap();
        assert_eq!(cfg.population_size, 8);
        assert_eq!(cfg.max_attempts, 5);
        assert_eq!(
            cfg.provider,
            ProviderSpec::Mock {
                seed: 3,
                failure_rate: 0.25
            }
        );
        let e = cfg.evolve_config(9);
        assert_eq!(e.limits.max_code_length, 4000);
        assert_eq!(e.provider.temperature, 0.7);
        assert_eq!(e.rng_seed, 9);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(toml::from_str::<AppConfig>("populaton_size = 3").is_err());
        let cfg = AppConfig {
            temperature: 3.0,
            ..AppConfig::default()
        };
        assert!(cfg.check().is_err());
    }
}
