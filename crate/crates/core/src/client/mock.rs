//! Deterministic backends for tests and desk-scale runs.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, EmbedBackend, RawCompletion, TransportError, Usage};

/// Hex SHA-256 of the system and user prompt, the key scripted entries match on.
pub fn prompt_hash(request: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(request.system_prompt.as_bytes());
    h.update(b"\x1f");
    h.update(request.user_prompt.as_bytes());
    hex::encode(h.finalize())
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    })
}

/// One line of a mock script.
///
/// Selectors are tried in order: `ordinal` (the zero-based call number),
/// `prompt_hash`, then `contains` (every substring must occur in the user
/// prompt). An entry with no selector is the fallback. `failures` lists HTTP
/// statuses returned on the first hits of the entry before `response` is
/// served; status 0 stands for a timeout.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, deserialize_with = "one_or_many", skip_serializing_if = "Vec::is_empty")]
    pub contains: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<u16>,
    pub response: String,
}

impl ScriptEntry {
    pub fn fallback(response: impl Into<String>) -> Self {
        ScriptEntry { response: response.into(), ..Default::default() }
    }

    pub fn for_ordinal(ordinal: u64, response: impl Into<String>) -> Self {
        ScriptEntry { ordinal: Some(ordinal), response: response.into(), ..Default::default() }
    }

    pub fn for_hash(hash: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptEntry { prompt_hash: Some(hash.into()), response: response.into(), ..Default::default() }
    }

    pub fn containing(needles: &[&str], response: impl Into<String>) -> Self {
        ScriptEntry {
            contains: needles.iter().map(|s| s.to_string()).collect(),
            response: response.into(),
            ..Default::default()
        }
    }

    pub fn with_failures(mut self, statuses: Vec<u16>) -> Self {
        self.failures = statuses;
        self
    }

    fn is_fallback(&self) -> bool {
        self.ordinal.is_none() && self.prompt_hash.is_none() && self.contains.is_empty()
    }
}

/// Chat backend that answers from a script instead of a model.
pub struct ScriptedChat {
    model_ref: String,
    entries: Vec<ScriptEntry>,
    calls: AtomicU64,
    hits: Mutex<HashMap<usize, usize>>,
    captured: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(model_ref: impl Into<String>, entries: Vec<ScriptEntry>) -> Self {
        ScriptedChat {
            model_ref: model_ref.into(),
            entries,
            calls: AtomicU64::new(0),
            hits: Mutex::new(HashMap::new()),
            captured: Mutex::new(Vec::new()),
        }
    }

    /// Loads a JSONL script file.
    pub fn from_file(model_ref: impl Into<String>, path: &Path) -> Result<Self, crate::io::IoError> {
        Ok(ScriptedChat::new(model_ref, crate::io::read_jsonl(path)?))
    }

    /// Number of requests that reached this backend.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every request received so far, in arrival order.
    pub fn captured(&self) -> Vec<ChatRequest> {
        self.captured.lock().unwrap().clone()
    }

    fn select(&self, ordinal: u64, request: &ChatRequest) -> Option<usize> {
        let hash = prompt_hash(request);
        let by = |pred: &dyn Fn(&ScriptEntry) -> bool| self.entries.iter().position(pred);
        by(&|e| e.ordinal == Some(ordinal))
            .or_else(|| by(&|e| e.prompt_hash.as_deref() == Some(hash.as_str())))
            .or_else(|| {
                by(&|e| {
                    !e.contains.is_empty()
                        && e.ordinal.is_none()
                        && e.prompt_hash.is_none()
                        && e.contains.iter().all(|n| request.user_prompt.contains(n.as_str()))
                })
            })
            .or_else(|| by(&|e| e.is_fallback()))
    }
}

impl ChatBackend for ScriptedChat {
    fn model_ref(&self) -> &str {
        &self.model_ref
    }

    fn send(&self, request: &ChatRequest) -> Result<RawCompletion, TransportError> {
        let ordinal = self.calls.fetch_add(1, Ordering::SeqCst);
        self.captured.lock().unwrap().push(request.clone());
        let Some(idx) = self.select(ordinal, request) else {
            return Err(TransportError::Fatal(format!(
                "no scripted response for prompt {}",
                prompt_hash(request)
            )));
        };
        let entry = &self.entries[idx];
        let hit = {
            let mut hits = self.hits.lock().unwrap();
            let n = hits.entry(idx).or_insert(0);
            *n += 1;
            *n - 1
        };
        if let Some(&status) = entry.failures.get(hit) {
            return Err(match status {
                0 => TransportError::Timeout,
                code => TransportError::Status { code, body: "scripted failure".into() },
            });
        }
        Ok(RawCompletion {
            text: entry.response.clone(),
            usage: Usage {
                prompt_tokens: request.user_prompt.split_whitespace().count() as u64,
                completion_tokens: entry.response.split_whitespace().count() as u64,
            },
        })
    }
}

/// Bag-of-words embedder: each lower-cased alphanumeric token is hashed into
/// one of `dim` buckets and the count vector is L2-normalized.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
    model_ref: String,
    calls: std::sync::Arc<AtomicU64>,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashEmbedder {
            dim,
            model_ref: format!("mock/bow-{dim}"),
            calls: Default::default(),
        }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn vectorize(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            let digest = Sha256::digest(token.to_lowercase().as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().unwrap()) % self.dim as u64;
            v[bucket as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbedBackend for HashEmbedder {
    fn model_ref(&self) -> &str {
        &self.model_ref
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(self.vectorize(text))
    }
}
