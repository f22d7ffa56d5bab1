//! Provider-agnostic chat and embedding access.
//!
//! Backends only move bytes. [`ChatClient`] and [`EmbedClient`] add the
//! retry policy, the content-addressed response cache and re-asking on
//! unparseable structured output.

mod cache;
pub mod config;
mod http;
mod mock;
mod schema;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use cache::DiskCache;
pub use config::{BackendConfig, BackendKind, BackendRegistry, ClientConfig, RetryConfig};
pub use http::{requests_sent, OpenAiChat, OpenAiEmbed};
pub use mock::{prompt_hash, HashEmbedder, ScriptEntry, ScriptedChat};
pub use schema::{parse_structured, FieldSpec, FieldType, SchemaError, SchemaHint};

use crate::batch::run_bounded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub schema_hint: Option<SchemaHint>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_ref: String,
}

impl ChatRequest {
    /// A plain request with temperature 0 and a 2048-token budget.
    pub fn new(model_ref: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        ChatRequest {
            system_prompt: String::new(),
            user_prompt: user_prompt.into(),
            schema_hint: None,
            temperature: 0.0,
            max_tokens: 2048,
            model_ref: model_ref.into(),
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_prompt = system.into();
        self
    }

    pub fn with_schema(mut self, schema: SchemaHint) -> Self {
        self.schema_hint = Some(schema);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    /// Hex SHA-256 over every field, so a change of model or temperature
    /// never hits another request's cache entry.
    pub fn cache_key(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn validate(&self) -> Result<(), ClientError> {
        if self.user_prompt.trim().is_empty() {
            return Err(ClientError::InvalidRequest("user_prompt is empty".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(ClientError::InvalidRequest(format!("temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(ClientError::InvalidRequest("max_tokens is 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatCompletion {
    pub text: String,
    pub parsed: Option<Value>,
    pub usage: Usage,
    pub cached: bool,
}

/// What a backend hands back before any parsing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawCompletion {
    pub text: String,
    pub usage: Usage,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Fatal(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::Timeout | TransportError::Connect(_) => true,
            TransportError::Fatal(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ClientError {
    #[error("authentication rejected (HTTP {status}): {message}")]
    Auth { status: u16, message: String },
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: TransportError },
    #[error("structured output still invalid after {reasks} re-asks: {error}")]
    SchemaParse { reasks: u32, error: SchemaError },
    #[error("request failed: {0}")]
    Request(TransportError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

pub trait ChatBackend: Send + Sync {
    fn model_ref(&self) -> &str;
    fn send(&self, request: &ChatRequest) -> Result<RawCompletion, TransportError>;
}

pub trait EmbedBackend: Send + Sync {
    fn model_ref(&self) -> &str;
    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, TransportError>;
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay: Duration::ZERO, max_delay: Duration::ZERO }
    }

    fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    fn run<T>(&self, mut f: impl FnMut() -> Result<T, TransportError>) -> Result<T, ClientError> {
        let attempts = self.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match f() {
                Ok(v) => return Ok(v),
                Err(TransportError::Status { code: code @ (401 | 403), body }) => {
                    return Err(ClientError::Auth { status: code, message: body })
                }
                Err(e) if !e.is_retryable() => return Err(ClientError::Request(e)),
                Err(e) if attempt >= attempts => {
                    return Err(ClientError::ExhaustedRetries { attempts: attempt, last: e })
                }
                Err(e) => {
                    let wait = self.delay(attempt - 1);
                    tracing::debug!(attempt, ?wait, error = %e, "retrying");
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
            }
        }
    }
}

/// A chat backend wrapped with retries, caching and structured-output re-asks.
#[derive(Clone)]
pub struct ChatClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    cache: Option<Arc<DiskCache>>,
    max_reasks: u32,
    temperature: f64,
}

impl ChatClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        ChatClient {
            backend,
            retry: RetryPolicy::default(),
            cache: None,
            max_reasks: 2,
            temperature: 0.0,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: Arc<DiskCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_reasks(mut self, n: u32) -> Self {
        self.max_reasks = n;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn model_ref(&self) -> &str {
        self.backend.model_ref()
    }

    /// Starts a request bound to this client's model and temperature.
    pub fn request(&self, user_prompt: impl Into<String>) -> ChatRequest {
        ChatRequest::new(self.model_ref(), user_prompt).with_temperature(self.temperature)
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, ClientError> {
        request.validate()?;
        let key = request.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<RawCompletion>(&key)) {
            let parsed = match &request.schema_hint {
                Some(schema) => parse_structured(schema, &hit.text).ok(),
                None => None,
            };
            if request.schema_hint.is_none() || parsed.is_some() {
                return Ok(ChatCompletion { text: hit.text, parsed, usage: hit.usage, cached: true });
            }
        }

        let mut current = request.clone();
        let mut reasks = 0;
        loop {
            let raw = self.retry.run(|| self.backend.send(&current))?;
            let parsed = match &request.schema_hint {
                None => None,
                Some(schema) => match parse_structured(schema, &raw.text) {
                    Ok(v) => Some(v),
                    Err(error) if reasks >= self.max_reasks => {
                        return Err(ClientError::SchemaParse { reasks, error })
                    }
                    Err(error) => {
                        reasks += 1;
                        tracing::debug!(reasks, %error, "re-asking after unparseable output");
                        current.user_prompt = format!(
                            "{}\n\nYour previous reply could not be used: {error}. \
                             Reply again with only a JSON object that has the required fields.",
                            request.user_prompt
                        );
                        continue;
                    }
                },
            };
            if let Some(cache) = &self.cache {
                cache.put(&key, &raw);
            }
            return Ok(ChatCompletion { text: raw.text, parsed, usage: raw.usage, cached: false });
        }
    }

    /// Runs requests with at most `parallelism` in flight; results line up
    /// with `requests` and failures stay at their position.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
        parallelism: usize,
    ) -> Vec<Result<ChatCompletion, ClientError>> {
        run_bounded(requests, parallelism, |r| self.complete(r))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_ref: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_ref: impl Into<String>) -> Result<Self, ClientError> {
        if values.is_empty() {
            return Err(ClientError::InvalidEmbedding("empty vector".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ClientError::InvalidEmbedding("non-finite entry".into()));
        }
        Ok(EmbeddingVector { values, model_ref: model_ref.into() })
    }

    /// Cosine similarity; `None` when dimensions differ. A zero vector has
    /// similarity 0 with everything.
    pub fn cosine(&self, other: &EmbeddingVector) -> Option<f64> {
        if self.values.len() != other.values.len() {
            return None;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            Some(0.0)
        } else {
            Some(dot / (na * nb))
        }
    }
}

#[derive(Clone)]
pub struct EmbedClient {
    backend: Arc<dyn EmbedBackend>,
    retry: RetryPolicy,
    cache: Option<Arc<DiskCache>>,
}

impl EmbedClient {
    pub fn new(backend: Arc<dyn EmbedBackend>) -> Self {
        EmbedClient { backend, retry: RetryPolicy::default(), cache: None }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_cache(mut self, cache: Arc<DiskCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn model_ref(&self) -> &str {
        self.backend.model_ref()
    }

    pub fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        if text.trim().is_empty() {
            return Err(ClientError::InvalidRequest("cannot embed empty text".into()));
        }
        let key = {
            let mut h = Sha256::new();
            h.update(b"embed\x1f");
            h.update(self.model_ref().as_bytes());
            h.update(b"\x1f");
            h.update(text.as_bytes());
            hex::encode(h.finalize())
        };
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get::<EmbeddingVector>(&key)) {
            return Ok(hit);
        }
        let values = self.retry.run(|| self.backend.embed_raw(text))?;
        let v = EmbeddingVector::new(values, self.model_ref())?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &v);
        }
        Ok(v)
    }
}
