//! Backend configuration file (TOML).
//!
//! ```toml
//! cache_dir = "cache"            # relative to the config file
//!
//! [retry]
//! max_attempts = 5
//! base_delay_ms = 500
//!
//! [[backend]]
//! name = "openrouter"
//! kind = "chat"                  # chat | embedding | mock | mock-embedding
//! base_url = "https://openrouter.ai/api/v1"
//! model = "mistralai/mistral-small-3.2-24b-instruct"
//! api_key_env = "NORMALIGN_KEY_OPENROUTER"
//!
//! [[backend]]
//! name = "toy-judge"
//! kind = "mock"
//! script = "mocks/judge.jsonl"
//!
//! [stages]
//! extract = "openrouter"
//!
//! [agents]
//! mistral-small = "openrouter"
//! ```
//!
//! Credentials are only ever read from the environment variable named by
//! `api_key_env`.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;

use super::{
    ChatBackend, ChatClient, ClientError, DiskCache, EmbedBackend, EmbedClient, HashEmbedder, OpenAiChat,
    OpenAiEmbed, RetryPolicy, ScriptedChat,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Chat,
    Embedding,
    Mock,
    MockEmbedding,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub name: String,
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
    pub script: Option<PathBuf>,
    pub dim: Option<usize>,
    pub timeout_secs: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetryConfig {
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_base_delay")]
    pub base_delay_ms: u64,
    #[serde(default = "default_max_delay")]
    pub max_delay_ms: u64,
}

fn default_attempts() -> u32 {
    5
}
fn default_base_delay() -> u64 {
    500
}
fn default_max_delay() -> u64 {
    30_000
}

impl Default for RetryConfig {
    fn default() -> Self {
        RetryConfig {
            max_attempts: default_attempts(),
            base_delay_ms: default_base_delay(),
            max_delay_ms: default_max_delay(),
        }
    }
}

impl RetryConfig {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.max_attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub cache_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub retry: RetryConfig,
    #[serde(default, rename = "backend")]
    pub backends: Vec<BackendConfig>,
    /// Stage name → backend name.
    #[serde(default)]
    pub stages: BTreeMap<String, String>,
    /// Responding agent → backend name.
    #[serde(default)]
    pub agents: BTreeMap<String, String>,
    /// Stage name → sampling temperature (default 0).
    #[serde(default)]
    pub temperature: BTreeMap<String, f64>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ClientConfig {
    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        ClientConfig::parse(&text, base)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, ClientError> {
        let mut cfg: ClientConfig = toml::from_str(text).map_err(|e| ClientError::Config(e.to_string()))?;
        cfg.base_dir = base_dir;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ClientError> {
        let mut seen = std::collections::HashSet::new();
        for b in &self.backends {
            if !seen.insert(b.name.as_str()) {
                return Err(ClientError::Config(format!("duplicate backend {}", b.name)));
            }
            let need = |field: bool, what: &str| {
                if field {
                    Ok(())
                } else {
                    Err(ClientError::Config(format!("backend {} needs `{what}`", b.name)))
                }
            };
            match b.kind {
                BackendKind::Chat | BackendKind::Embedding => {
                    need(b.base_url.is_some(), "base_url")?;
                    need(b.model.is_some(), "model")?;
                }
                BackendKind::Mock => need(b.script.is_some(), "script")?,
                BackendKind::MockEmbedding => {}
            }
        }
        for (what, map) in [("stage", &self.stages), ("agent", &self.agents)] {
            for (k, v) in map {
                if !seen.contains(v.as_str()) {
                    return Err(ClientError::Config(format!("{what} {k} names unknown backend {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn backend(&self, name: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.name == name)
    }
}

/// Lazily built, shared backend handles for one configuration.
pub struct BackendRegistry {
    config: ClientConfig,
    cache: Option<Arc<DiskCache>>,
    chats: Mutex<HashMap<String, Arc<dyn ChatBackend>>>,
    embeds: Mutex<HashMap<String, Arc<dyn EmbedBackend>>>,
}

impl BackendRegistry {
    pub fn new(config: ClientConfig, cache: Option<Arc<DiskCache>>) -> Self {
        BackendRegistry {
            config,
            cache,
            chats: Mutex::new(HashMap::new()),
            embeds: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn api_key(b: &BackendConfig) -> Result<Option<String>, ClientError> {
        match &b.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::Config(format!("environment variable {var} is not set"))),
        }
    }

    fn lookup(&self, name: &str) -> Result<&BackendConfig, ClientError> {
        self.config
            .backend(name)
            .ok_or_else(|| ClientError::Config(format!("unknown backend {name}")))
    }

    /// Installs a ready-made chat backend under `name`, e.g. an instrumented mock.
    pub fn insert_chat(&self, name: impl Into<String>, backend: Arc<dyn ChatBackend>) {
        self.chats.lock().unwrap().insert(name.into(), backend);
    }

    pub fn chat_backend(&self, name: &str) -> Result<Arc<dyn ChatBackend>, ClientError> {
        if let Some(b) = self.chats.lock().unwrap().get(name) {
            return Ok(b.clone());
        }
        let b = self.lookup(name)?;
        let timeout = Duration::from_secs(b.timeout_secs.unwrap_or(120));
        let backend: Arc<dyn ChatBackend> = match b.kind {
            BackendKind::Chat => Arc::new(OpenAiChat::new(
                &b.name,
                b.base_url.as_deref().unwrap_or_default(),
                b.model.as_deref().unwrap_or_default(),
                Self::api_key(b)?,
                timeout,
            )),
            BackendKind::Mock => {
                let path = self.config.resolve(b.script.as_deref().unwrap_or(Path::new("")));
                Arc::new(
                    ScriptedChat::from_file(format!("mock:{}", b.name), &path)
                        .map_err(|e| ClientError::Config(e.to_string()))?,
                )
            }
            _ => return Err(ClientError::Config(format!("backend {name} is not a chat backend"))),
        };
        self.chats.lock().unwrap().insert(name.to_string(), backend.clone());
        Ok(backend)
    }

    pub fn embed_backend(&self, name: &str) -> Result<Arc<dyn EmbedBackend>, ClientError> {
        if let Some(b) = self.embeds.lock().unwrap().get(name) {
            return Ok(b.clone());
        }
        let b = self.lookup(name)?;
        let backend: Arc<dyn EmbedBackend> = match b.kind {
            BackendKind::Embedding => Arc::new(OpenAiEmbed::new(
                &b.name,
                b.base_url.as_deref().unwrap_or_default(),
                b.model.as_deref().unwrap_or_default(),
                Self::api_key(b)?,
                Duration::from_secs(b.timeout_secs.unwrap_or(120)),
            )),
            BackendKind::MockEmbedding => Arc::new(HashEmbedder::new(b.dim.unwrap_or(256))),
            _ => return Err(ClientError::Config(format!("backend {name} is not an embedding backend"))),
        };
        self.embeds.lock().unwrap().insert(name.to_string(), backend.clone());
        Ok(backend)
    }

    /// A client for `backend`, using the retry policy, cache and the
    /// temperature configured for `stage`.
    pub fn chat(&self, backend: &str, stage: &str) -> Result<ChatClient, ClientError> {
        let mut c = ChatClient::new(self.chat_backend(backend)?)
            .with_retry(self.config.retry.policy())
            .with_temperature(self.config.temperature.get(stage).copied().unwrap_or(0.0));
        if let Some(cache) = &self.cache {
            c = c.with_cache(cache.clone());
        }
        Ok(c)
    }

    pub fn embed(&self, backend: &str) -> Result<EmbedClient, ClientError> {
        let mut c = EmbedClient::new(self.embed_backend(backend)?).with_retry(self.config.retry.policy());
        if let Some(cache) = &self.cache {
            c = c.with_cache(cache.clone());
        }
        Ok(c)
    }

    /// Backend name for a stage: explicit override, then `[stages]`.
    pub fn stage_backend(&self, stage: &str, override_name: Option<&str>) -> Result<String, ClientError> {
        override_name
            .map(str::to_string)
            .or_else(|| self.config.stages.get(stage).cloned())
            .ok_or_else(|| ClientError::Config(format!("no backend configured for stage {stage}")))
    }
}
