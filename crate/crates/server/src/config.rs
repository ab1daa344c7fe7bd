use std::path::{Path, PathBuf};

use ideaspace_core::engine::provider::HttpProviderConfig;
use ideaspace_core::engine::EngineConfig;
use ideaspace_core::geometry::GeometryConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Stub,
    Live,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSection {
    pub kind: ProviderKind,
    pub prompts_dir: PathBuf,
    /// Stub only.
    pub seed: u64,
    /// Stub only: optional canned answers.
    pub fixture: Option<PathBuf>,
    /// Concurrent provider calls allowed per session.
    pub in_flight_limit: usize,
    /// Live only: base of an OpenAI-compatible API.
    pub base_url: String,
    pub model: String,
    /// Live only: environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub engine: EngineConfig,
}

impl ProviderSection {
    pub fn http(&self) -> HttpProviderConfig {
        HttpProviderConfig {
            base_url: self.base_url.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            timeout_secs: self.timeout_secs,
        }
    }
}

impl Default for ProviderSection {
    fn default() -> Self {
        let http = HttpProviderConfig::default();
        Self {
            kind: ProviderKind::Stub,
            prompts_dir: PathBuf::from("prompts"),
            seed: 0,
            fixture: None,
            in_flight_limit: 3,
            base_url: http.base_url,
            model: http.model,
            api_key_env: http.api_key_env,
            timeout_secs: http.timeout_secs,
            engine: EngineConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersistenceSection {
    /// Sessions are kept in memory only when unset.
    pub dir: Option<PathBuf>,
    /// Journal records between snapshots.
    pub snapshot_every: u64,
}

impl Default for PersistenceSection {
    fn default() -> Self {
        Self {
            dir: None,
            snapshot_every: 50,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerSection,
    pub provider: ProviderSection,
    pub geometry: GeometryConfig,
    pub persistence: PersistenceSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads a TOML file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Config::from_toml(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut config.provider.prompts_dir);
        if let Some(f) = config.provider.fixture.as_mut() {
            rebase(f);
        }
        if let Some(d) = config.persistence.dir.as_mut() {
            rebase(d);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = &self.geometry;
        if !(g.merge_threshold > 0.0 && g.merge_threshold.is_finite()) {
            return Err(ConfigError::Invalid("geometry.merge_threshold must be positive".into()));
        }
        if !(g.node_radius_min > 0.0 && g.node_radius_min <= g.node_radius_max && g.node_radius_max.is_finite()) {
            return Err(ConfigError::Invalid(
                "geometry.node_radius_min must be positive and not above node_radius_max".into(),
            ));
        }
        if self.provider.in_flight_limit == 0 {
            return Err(ConfigError::Invalid("provider.in_flight_limit must be at least 1".into()));
        }
        if self.persistence.snapshot_every == 0 {
            return Err(ConfigError::Invalid("persistence.snapshot_every must be at least 1".into()));
        }
        Ok(())
    }
}
