//! Gateway configuration file (TOML). Relative paths resolve against the
//! directory holding the file. The backend key is read from an environment
//! variable named in the file, never from the file itself.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use plcagent::agent::{AgentConfig, HttpSettings, DEFAULT_MAX_TOOL_ROUNDS};
use plcagent::machine::SpecError;
use plcagent::{load_machine_spec_file, MachineSpec};

pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
pub const DEFAULT_KEY_ENV: &str = "PLCAGENT_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("cannot parse {}: {reason}", path.display())]
    ParseError { path: PathBuf, reason: String },
    #[error("environment variable {0} holding the backend key is not set")]
    MissingKeyEnvVar(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("machine config {}: {source}", path.display())]
    Machine { path: PathBuf, source: SpecError },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKindSetting {
    #[default]
    Oracle,
    Scripted,
    Http,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    #[serde(default)]
    kind: BackendKindSetting,
    script: Option<PathBuf>,
    base_url: Option<String>,
    model: Option<String>,
    key_env: Option<String>,
    temperature: Option<f64>,
    timeout_secs: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    machine: PathBuf,
    listen: Option<String>,
    max_tool_rounds: Option<usize>,
    ui_assets: Option<PathBuf>,
    suite: Option<PathBuf>,
    scripted_dir: Option<PathBuf>,
    #[serde(default)]
    initial_state: BTreeMap<String, Value>,
    #[serde(default)]
    backend: RawBackend,
}

/// Language-model backend selected by the configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendSettings {
    Oracle,
    Scripted { script: PathBuf },
    Http(HttpSettings),
}

impl BackendSettings {
    pub fn label(&self) -> String {
        match self {
            BackendSettings::Oracle => "oracle".into(),
            BackendSettings::Scripted { script } => format!("scripted:{}", script.display()),
            BackendSettings::Http(s) => format!("http:{}", s.model),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub machine_path: PathBuf,
    pub spec: Arc<MachineSpec>,
    pub listen: SocketAddr,
    pub agent: AgentConfig,
    pub backend: BackendSettings,
    pub ui_assets: Option<PathBuf>,
    /// Suite used by `/api/bench/run` when the request names none.
    pub suite: Option<PathBuf>,
    /// Directory of scripted transcripts selectable by name for bench runs.
    pub scripted_dir: Option<PathBuf>,
    /// Start values for an in-process simulator.
    pub initial_state: BTreeMap<String, Value>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<GatewayConfig, ConfigError> {
    load_config_with_env(path, &|name| std::env::var(name).ok())
}

/// Like [`load_config`] with an explicit environment lookup.
pub fn load_config_with_env(
    path: impl AsRef<Path>,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<GatewayConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|_| ConfigError::MissingFile(path.to_path_buf()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, path, base, env)
}

fn existing(base: &Path, relative: &Path) -> Result<PathBuf, ConfigError> {
    let path = base.join(relative);
    if path.exists() {
        Ok(path)
    } else {
        Err(ConfigError::MissingFile(path))
    }
}

fn parse_config(
    text: &str,
    origin: &Path,
    base: &Path,
    env: &dyn Fn(&str) -> Option<String>,
) -> Result<GatewayConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::ParseError {
        path: origin.to_path_buf(),
        reason: e.to_string(),
    })?;

    let machine_path = existing(base, &raw.machine)?;
    let spec = load_machine_spec_file(&machine_path).map_err(|source| ConfigError::Machine {
        path: machine_path.clone(),
        source,
    })?;

    let listen_text = raw.listen.as_deref().unwrap_or(DEFAULT_LISTEN);
    let listen = listen_text
        .parse()
        .map_err(|_| ConfigError::Invalid(format!("listen address {listen_text:?} is not host:port")))?;

    let agent = AgentConfig::new(raw.max_tool_rounds.unwrap_or(DEFAULT_MAX_TOOL_ROUNDS))
        .ok_or_else(|| ConfigError::Invalid("max_tool_rounds must be at least 1".into()))?;

    let backend = match raw.backend.kind {
        BackendKindSetting::Oracle => BackendSettings::Oracle,
        BackendKindSetting::Scripted => {
            let script = raw
                .backend
                .script
                .ok_or_else(|| ConfigError::Invalid("scripted backend needs `script`".into()))?;
            BackendSettings::Scripted {
                script: existing(base, &script)?,
            }
        }
        BackendKindSetting::Http => {
            let b = raw.backend;
            let base_url = b
                .base_url
                .ok_or_else(|| ConfigError::Invalid("http backend needs `base_url`".into()))?;
            let model = b
                .model
                .ok_or_else(|| ConfigError::Invalid("http backend needs `model`".into()))?;
            let key_env = b.key_env.unwrap_or_else(|| DEFAULT_KEY_ENV.to_string());
            let key = env(&key_env).ok_or(ConfigError::MissingKeyEnvVar(key_env))?;
            let mut settings = HttpSettings::new(base_url, model);
            settings.api_key = Some(key);
            if let Some(t) = b.temperature {
                settings.temperature = t;
            }
            if let Some(secs) = b.timeout_secs {
                settings.timeout = Duration::from_secs(secs);
            }
            BackendSettings::Http(settings)
        }
    };

    let optional = |p: Option<PathBuf>| p.map(|p| existing(base, &p)).transpose();
    let config = GatewayConfig {
        machine_path,
        spec: Arc::new(spec),
        listen,
        agent,
        backend,
        ui_assets: optional(raw.ui_assets)?,
        suite: optional(raw.suite)?,
        scripted_dir: optional(raw.scripted_dir)?,
        initial_state: raw.initial_state,
    };
    if !config.initial_state.is_empty() && !config.spec.credentials.endpoint.starts_with("inproc://") {
        return Err(ConfigError::Invalid(
            "initial_state applies only to an inproc:// simulator endpoint".into(),
        ));
    }
    for name in config.initial_state.keys() {
        if config.spec.by_name(name).is_none() {
            return Err(ConfigError::Invalid(format!("initial_state names unknown parameter {name:?}")));
        }
    }
    Ok(config)
}
