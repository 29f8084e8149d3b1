//! Engine configuration: defaults, a flat TOML file, environment variables
//! and command-line flags, applied in that order.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use gam_core::modelbackend::HttpBackend;
use gam_core::modelbackend::{HttpConfig, ModelBackend, ScriptedBackend};
use gam_core::{EngineSettings, OutputFormat, ResearchConfig, ToolKind};
use serde::Deserialize;
use thiserror::Error;

pub const ENV_API_KEY: &str = "GAM_API_KEY";
pub const ENV_BASE_URL: &str = "GAM_BASE_URL";
pub const ENV_STORE: &str = "GAM_STORE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot build backend: {0}")]
    Backend(String),
}

/// Every field optional. Used for the config file and for flags alike.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub page_size: Option<usize>,
    pub max_reflection_depth: Option<usize>,
    pub top_k: Option<usize>,
    pub output_format: Option<String>,
    pub enabled_tools: Option<Vec<String>>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub scripted_rules: Option<PathBuf>,
    pub store_path: Option<PathBuf>,
}

impl ConfigLayer {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn read(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    /// The layer contributed by `GAM_API_KEY`, `GAM_BASE_URL` and
    /// `GAM_STORE`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Self {
        let get = |k| lookup(k).filter(|v: &String| !v.is_empty());
        Self {
            api_key: get(ENV_API_KEY),
            base_url: get(ENV_BASE_URL),
            store_path: get(ENV_STORE).map(PathBuf::from),
            ..Self::default()
        }
    }

    /// `self` with every unset field taken from `lower`.
    pub fn over(self, lower: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            page_size: self.page_size.or(lower.page_size),
            max_reflection_depth: self.max_reflection_depth.or(lower.max_reflection_depth),
            top_k: self.top_k.or(lower.top_k),
            output_format: self.output_format.or(lower.output_format),
            enabled_tools: self.enabled_tools.or(lower.enabled_tools),
            base_url: self.base_url.or(lower.base_url),
            model: self.model.or(lower.model),
            api_key: self.api_key.or(lower.api_key),
            scripted_rules: self.scripted_rules.or(lower.scripted_rules),
            store_path: self.store_path.or(lower.store_path),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendConfig {
    Http {
        base_url: String,
        model: String,
        api_key: Option<String>,
    },
    /// Path to a scripted-rule JSON file.
    Scripted(PathBuf),
}

impl BackendConfig {
    /// Builds the backend. For HTTP this must run outside an async runtime.
    pub fn build(&self) -> Result<Box<dyn ModelBackend>, ConfigError> {
        match self {
            BackendConfig::Scripted(path) => ScriptedBackend::from_json_file(path)
                .map(|b| Box::new(b) as Box<dyn ModelBackend>)
                .map_err(|e| ConfigError::Backend(format!("{}: {e}", path.display()))),
            BackendConfig::Http {
                base_url,
                model,
                api_key,
            } => {
                let config = HttpConfig {
                    base_url: base_url.clone(),
                    model: model.clone(),
                    api_key: api_key.clone(),
                    ..HttpConfig::default()
                };
                HttpBackend::new(config)
                    .map(|b| Box::new(b) as Box<dyn ModelBackend>)
                    .map_err(|e| ConfigError::Backend(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub page_size: usize,
    pub max_reflection_depth: usize,
    pub top_k: usize,
    pub output_format: OutputFormat,
    pub enabled_tools: BTreeSet<ToolKind>,
    pub backend: BackendConfig,
    pub store_path: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let http = HttpConfig::default();
        Self {
            page_size: 2048,
            max_reflection_depth: 3,
            top_k: 5,
            output_format: OutputFormat::IntegrationOnly,
            enabled_tools: ToolKind::ALL.into_iter().collect(),
            backend: BackendConfig::Http {
                base_url: http.base_url,
                model: http.model,
                api_key: None,
            },
            store_path: PathBuf::from("gam-store"),
        }
    }
}

pub fn parse_tools<S: AsRef<str>>(names: &[S]) -> Result<BTreeSet<ToolKind>, ConfigError> {
    let tools = names
        .iter()
        .map(|n| n.as_ref().parse::<ToolKind>())
        .collect::<Result<BTreeSet<_>, _>>()
        .map_err(ConfigError::Invalid)?;
    if tools.is_empty() {
        return Err(ConfigError::Invalid(
            "enabled_tools must not be empty".into(),
        ));
    }
    Ok(tools)
}

impl EngineConfig {
    /// Resolves `flags > env > file > defaults`.
    pub fn resolve(
        flags: ConfigLayer,
        env: ConfigLayer,
        file: ConfigLayer,
    ) -> Result<Self, ConfigError> {
        let merged = flags.over(env).over(file);
        let defaults = EngineConfig::default();
        let positive = |name: &str, v: Option<usize>, d: usize| match v {
            Some(0) => Err(ConfigError::Invalid(format!("{name} must be at least 1"))),
            Some(v) => Ok(v),
            None => Ok(d),
        };
        let output_format = match merged.output_format {
            Some(f) => f.parse().map_err(ConfigError::Invalid)?,
            None => defaults.output_format,
        };
        let enabled_tools = match merged.enabled_tools {
            Some(t) => parse_tools(&t)?,
            None => defaults.enabled_tools,
        };
        let backend = match merged.scripted_rules {
            Some(path) => BackendConfig::Scripted(path),
            None => {
                let http = HttpConfig::default();
                BackendConfig::Http {
                    base_url: merged.base_url.unwrap_or(http.base_url),
                    model: merged.model.unwrap_or(http.model),
                    api_key: merged.api_key,
                }
            }
        };
        Ok(Self {
            page_size: positive("page_size", merged.page_size, defaults.page_size)?,
            max_reflection_depth: merged
                .max_reflection_depth
                .unwrap_or(defaults.max_reflection_depth),
            top_k: positive("top_k", merged.top_k, defaults.top_k)?,
            output_format,
            enabled_tools,
            backend,
            store_path: merged.store_path.unwrap_or(defaults.store_path),
        })
    }

    pub fn research_config(&self) -> ResearchConfig {
        ResearchConfig {
            max_reflection_depth: self.max_reflection_depth,
            top_k: self.top_k,
            enabled_tools: self.enabled_tools.clone(),
            output_format: self.output_format,
            ..ResearchConfig::default()
        }
    }

    pub fn engine_settings(&self) -> EngineSettings {
        let mut settings = EngineSettings::default();
        settings.memorizer.page_size = self.page_size;
        settings.research = self.research_config();
        settings
    }
}
