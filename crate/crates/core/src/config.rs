//! The JSON configuration document and what it loads.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bt::TreeError;
use crate::domain::{ActionCatalog, Diagnostic, DomainError, Inventory, TaskLibrary, DEFAULT_QUANTITY_LIMIT};
use crate::llm::{PromptError, PromptSet, RemoteConfig};
use crate::orchestrator::Trees;

/// Environment variable holding the remote backend's API key.
pub const API_KEY_ENV: &str = "BTACTION_API_KEY";

pub const DEFAULT_MAX_FALLBACK_TURNS: u32 = 10;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

pub fn read_text(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Remote {
        endpoint: String,
        model: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
    /// A rule table file.
    Scripted { rules: PathBuf },
    /// Rules derived from a case dataset's gold labels.
    Canonical { cases: PathBuf },
}

fn default_timeout_s() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

impl BackendConfig {
    /// Remote settings with the API key taken from the environment.
    pub fn remote_config(&self) -> Option<Result<RemoteConfig, ConfigError>> {
        let BackendConfig::Remote {
            endpoint,
            model,
            timeout_s,
            retries,
        } = self
        else {
            return None;
        };
        let timeout = match Duration::try_from_secs_f64(*timeout_s) {
            Ok(t) if !t.is_zero() => t,
            _ => return Some(Err(ConfigError::Invalid(format!("timeout_s must be positive, got {timeout_s}")))),
        };
        let mut cfg = RemoteConfig::new(endpoint.clone(), model.clone());
        cfg.timeout = timeout;
        cfg.retries = *retries;
        cfg.api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Some(Ok(cfg))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryConfig {
    pub ingredients: Vec<String>,
}

/// The configuration document as written on disk. Relative paths are
/// resolved against the document's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub catalog: ActionCatalog,
    pub library: TaskLibrary,
    pub inventory: InventoryConfig,
    #[serde(default)]
    pub prompts: Option<PathBuf>,
    #[serde(default)]
    pub trees: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default = "default_quantity_limit")]
    pub quantity_limit: u32,
    #[serde(default = "default_max_fallback")]
    pub max_fallback_turns: u32,
    #[serde(default = "default_bind")]
    pub bind: String,
}

fn default_quantity_limit() -> u32 {
    DEFAULT_QUANTITY_LIMIT
}

fn default_max_fallback() -> u32 {
    DEFAULT_MAX_FALLBACK_TURNS
}

fn default_bind() -> String {
    "127.0.0.1:8080".to_string()
}

/// The static world a session runs against.
#[derive(Debug, Clone)]
pub struct Kitchen {
    pub catalog: ActionCatalog,
    pub library: TaskLibrary,
    pub inventory: Inventory,
}

impl Kitchen {
    /// Steps of library tasks that fail validation; empty for a consistent kitchen.
    pub fn self_check(&self) -> Vec<(String, usize, Diagnostic)> {
        self.library.self_check(&self.catalog, &self.inventory)
    }
}

/// Everything loaded and validated from a configuration document.
#[derive(Debug, Clone)]
pub struct AppConfig {
    pub kitchen: Kitchen,
    pub prompts: PromptSet,
    pub trees: Trees,
    pub backend: BackendConfig,
    pub max_fallback_turns: u32,
    pub bind: String,
    pub base_dir: PathBuf,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, &base_dir)
    }

    pub fn from_file(file: ConfigFile, base_dir: &Path) -> Result<Self, ConfigError> {
        let inventory = Inventory::new(file.inventory.ingredients, file.quantity_limit)?;
        if file.max_fallback_turns == 0 {
            return Err(ConfigError::Invalid("max_fallback_turns must be at least 1".into()));
        }
        let prompts = match &file.prompts {
            Some(dir) => PromptSet::load_dir(&base_dir.join(dir))?,
            None => PromptSet::builtin(),
        };
        let trees = match &file.trees {
            Some(p) => Trees::from_json(&read_text(&base_dir.join(p))?)?,
            None => Trees::builtin(),
        };
        let backend = match file.backend {
            BackendConfig::Scripted { rules } => BackendConfig::Scripted {
                rules: base_dir.join(rules),
            },
            BackendConfig::Canonical { cases } => BackendConfig::Canonical {
                cases: base_dir.join(cases),
            },
            remote => remote,
        };
        if let Some(Err(e)) = backend.remote_config() {
            return Err(e);
        }
        Ok(Self {
            kitchen: Kitchen {
                catalog: file.catalog,
                library: file.library,
                inventory,
            },
            prompts,
            trees,
            backend,
            max_fallback_turns: file.max_fallback_turns,
            bind: file.bind,
            base_dir: base_dir.to_path_buf(),
        })
    }
}
