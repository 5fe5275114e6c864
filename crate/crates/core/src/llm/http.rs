//! Chat-completion client for servers speaking the messages/choices schema.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::gateway::{ChatRequest, LlmBackend};
use super::LlmError;
use crate::retry::CallError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatBackendConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ChatBackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 300,
        }
    }
}

pub struct HttpChatBackend {
    cfg: ChatBackendConfig,
    endpoint: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpChatBackend {
    pub fn new(cfg: ChatBackendConfig) -> Result<Self, LlmError> {
        let api_key = cfg.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Fatal(e.to_string()))?;
        let endpoint = format!("{}/chat/completions", cfg.base_url.trim_end_matches('/'));
        Ok(Self { cfg, endpoint, api_key, client })
    }
}

pub(crate) fn request_body(model: &str, req: &ChatRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": req.prompt}],
        "temperature": req.temperature,
        "max_tokens": req.max_tokens,
    });
    if let Some(seed) = req.seed {
        body["seed"] = json!(seed);
    }
    body
}

pub(crate) fn parse_chat_response(value: &Value) -> Option<String> {
    value.get("choices")?.get(0)?.get("message")?.get("content")?.as_str().map(str::to_owned)
}

impl LlmBackend for HttpChatBackend {
    fn id(&self) -> &str {
        &self.cfg.model
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, CallError> {
        let mut http = self.client.post(&self.endpoint).json(&request_body(&self.cfg.model, req));
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| CallError::transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| CallError::transient(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(CallError::from_status(status, &body));
        }
        let value: Value = serde_json::from_str(&body).map_err(|e| CallError::fatal(format!("bad JSON: {e}")))?;
        parse_chat_response(&value).ok_or_else(|| CallError::fatal("response has no choices[0].message.content"))
    }
}
