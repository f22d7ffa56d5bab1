//! OpenAI-compatible HTTP backends (`/chat/completions`, `/embeddings`).

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde_json::{json, Value};

use super::{ChatBackend, ChatRequest, EmbedBackend, RawCompletion, TransportError, Usage};

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

static REQUESTS: AtomicU64 = AtomicU64::new(0);

/// Requests attempted by the HTTP backends in this process.
pub fn requests_sent() -> u64 {
    REQUESTS.load(Ordering::SeqCst)
}

fn post_json(agent: &ureq::Agent, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value, TransportError> {
    REQUESTS.fetch_add(1, Ordering::SeqCst);
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key {
        req = req.header("Authorization", &format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body).map_err(|e| match e {
        ureq::Error::Timeout(_) => TransportError::Timeout,
        other => TransportError::Connect(other.to_string()),
    })?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| TransportError::Connect(e.to_string()))?;
    if !(200..300).contains(&status) {
        return Err(TransportError::Status { code: status, body: text });
    }
    serde_json::from_str(&text).map_err(|e| TransportError::Fatal(format!("malformed response body: {e}")))
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{path}", base_url.trim_end_matches('/'))
}

pub struct OpenAiChat {
    base_url: String,
    model: String,
    model_ref: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiChat {
    pub fn new(provider: &str, base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        OpenAiChat {
            base_url: base_url.to_string(),
            model: model.to_string(),
            model_ref: format!("{provider}:{model}"),
            api_key,
            agent: agent(timeout),
        }
    }
}

impl ChatBackend for OpenAiChat {
    fn model_ref(&self) -> &str {
        &self.model_ref
    }

    fn send(&self, request: &ChatRequest) -> Result<RawCompletion, TransportError> {
        let mut messages = Vec::new();
        if !request.system_prompt.is_empty() {
            messages.push(json!({"role": "system", "content": request.system_prompt}));
        }
        messages.push(json!({"role": "user", "content": request.user_prompt}));
        let mut body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        if request.schema_hint.is_some() {
            body["response_format"] = json!({"type": "json_object"});
        }
        let v = post_json(
            &self.agent,
            &endpoint(&self.base_url, "chat/completions"),
            self.api_key.as_deref(),
            &body,
        )?;
        let text = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        };
        Ok(RawCompletion { text, usage })
    }
}

pub struct OpenAiEmbed {
    base_url: String,
    model: String,
    model_ref: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl OpenAiEmbed {
    pub fn new(provider: &str, base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Self {
        OpenAiEmbed {
            base_url: base_url.to_string(),
            model: model.to_string(),
            model_ref: format!("{provider}:{model}"),
            api_key,
            agent: agent(timeout),
        }
    }
}

impl EmbedBackend for OpenAiEmbed {
    fn model_ref(&self) -> &str {
        &self.model_ref
    }

    fn embed_raw(&self, text: &str) -> Result<Vec<f64>, TransportError> {
        let body = json!({"model": self.model, "input": text});
        let v = post_json(
            &self.agent,
            &endpoint(&self.base_url, "embeddings"),
            self.api_key.as_deref(),
            &body,
        )?;
        v["data"][0]["embedding"]
            .as_array()
            .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or_else(|| TransportError::Fatal("response has no data[0].embedding".into()))
    }
}
