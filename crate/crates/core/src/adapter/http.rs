//! HTTP chat-completion backends for the two common wire formats.
//!
//! Credentials come from `PROVIDER_<ID>_API_KEY` and an optional base URL
//! override from `PROVIDER_<ID>_BASE_URL`, where `<ID>` is the provider id
//! upper-cased with non-alphanumerics replaced by `_`.

use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{FinishReason, Prompt, Provider, ProviderReply, ResponseFormat};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, TokenUsage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `POST {base}/v1/chat/completions`
    #[serde(rename = "openai")]
    OpenAi,
    /// `POST {base}/v1/messages`
    Anthropic,
}

impl WireFormat {
    pub fn default_base_url(self) -> &'static str {
        match self {
            WireFormat::OpenAi => "https://api.openai.com",
            WireFormat::Anthropic => "https://api.anthropic.com",
        }
    }
}

pub fn env_key(provider_id: &str, suffix: &str) -> String {
    let id: String = provider_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("PROVIDER_{id}_{suffix}")
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    id: String,
    format: WireFormat,
    base_url: String,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl HttpProvider {
    pub fn new(id: &str, format: WireFormat, base_url: &str, api_key: Option<String>, timeout: Duration) -> Result<Self> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(HttpProvider {
            id: id.to_string(),
            format,
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            client,
        })
    }

    /// Reads credentials and base URL from the environment.
    pub fn from_env(id: &str, format: WireFormat, base_url: Option<&str>, timeout: Duration) -> Result<Self> {
        let key = std::env::var(env_key(id, "API_KEY")).ok();
        let base = std::env::var(env_key(id, "BASE_URL"))
            .ok()
            .or_else(|| base_url.map(str::to_string))
            .unwrap_or_else(|| format.default_base_url().to_string());
        Self::new(id, format, &base, key, timeout)
    }

    fn transport(&self, message: impl Into<String>) -> Error {
        Error::Transport {
            provider: self.id.clone(),
            message: message.into(),
        }
    }

    async fn post(&self, url: String, body: Value) -> Result<Value> {
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = match self.format {
                WireFormat::OpenAi => req.bearer_auth(key),
                WireFormat::Anthropic => req.header("x-api-key", key),
            };
        }
        if self.format == WireFormat::Anthropic {
            req = req.header("anthropic-version", "2023-06-01");
        }
        let resp = req.send().await.map_err(|e| self.transport(e.to_string()))?;
        let status = resp.status();
        let payload: Value = resp.json().await.map_err(|e| self.transport(format!("bad body: {e}")))?;
        if status.is_success() {
            return Ok(payload);
        }
        let msg = payload
            .pointer("/error/message")
            .and_then(Value::as_str)
            .unwrap_or("request failed")
            .to_string();
        if status.as_u16() == 429 || status.is_server_error() {
            Err(self.transport(format!("{status}: {msg}")))
        } else {
            Err(Error::BadRequest(format!("{}: {status}: {msg}", self.id)))
        }
    }
}

/// Renders prior turns as alternating user/assistant messages.
pub fn openai_body(model: &ModelSpec, prompt: &Prompt) -> Value {
    let mut messages = Vec::new();
    if !prompt.system.is_empty() {
        messages.push(json!({"role": "system", "content": prompt.system}));
    }
    for t in &prompt.turns {
        messages.push(json!({"role": "user", "content": t.query}));
        messages.push(json!({"role": "assistant", "content": t.response}));
    }
    messages.push(json!({"role": "user", "content": prompt.query}));
    let mut body = json!({
        "model": model.model_id,
        "messages": messages,
        "temperature": prompt.temperature,
    });
    if prompt.response_format == ResponseFormat::Structured {
        body["response_format"] = json!({"type": "json_object"});
    }
    body
}

pub fn anthropic_body(model: &ModelSpec, prompt: &Prompt) -> Value {
    let mut messages = Vec::new();
    for t in &prompt.turns {
        messages.push(json!({"role": "user", "content": t.query}));
        messages.push(json!({"role": "assistant", "content": t.response}));
    }
    messages.push(json!({"role": "user", "content": prompt.query}));
    let mut body = json!({
        "model": model.model_id,
        "max_tokens": 4096,
        "messages": messages,
        "temperature": prompt.temperature,
    });
    if !prompt.system.is_empty() {
        body["system"] = json!(prompt.system);
    }
    body
}

pub fn parse_openai(payload: &Value) -> Option<(String, Option<TokenUsage>, FinishReason)> {
    let choice = payload.pointer("/choices/0")?;
    let text = choice.pointer("/message/content")?.as_str()?.to_string();
    let finish = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Truncated,
        Some("stop") | None => FinishReason::Complete,
        Some(_) => FinishReason::Complete,
    };
    let usage = payload.get("usage").and_then(|u| {
        Some(TokenUsage::new(
            u.get("prompt_tokens")?.as_u64()?,
            u.get("completion_tokens")?.as_u64()?,
        ))
    });
    Some((text, usage, finish))
}

pub fn parse_anthropic(payload: &Value) -> Option<(String, Option<TokenUsage>, FinishReason)> {
    let blocks = payload.get("content")?.as_array()?;
    let text: String = blocks
        .iter()
        .filter(|b| b.get("type").and_then(Value::as_str) == Some("text"))
        .filter_map(|b| b.get("text").and_then(Value::as_str))
        .collect();
    let finish = match payload.get("stop_reason").and_then(Value::as_str) {
        Some("max_tokens") => FinishReason::Truncated,
        _ => FinishReason::Complete,
    };
    let usage = payload.get("usage").and_then(|u| {
        Some(TokenUsage::new(
            u.get("input_tokens")?.as_u64()?,
            u.get("output_tokens")?.as_u64()?,
        ))
    });
    Some((text, usage, finish))
}

#[async_trait]
impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn send(&self, model: &ModelSpec, prompt: &Prompt) -> Result<ProviderReply> {
        let started = Instant::now();
        let (payload, parsed) = match self.format {
            WireFormat::OpenAi => {
                let p = self
                    .post(format!("{}/v1/chat/completions", self.base_url), openai_body(model, prompt))
                    .await?;
                let parsed = parse_openai(&p);
                (p, parsed)
            }
            WireFormat::Anthropic => {
                let p = self
                    .post(format!("{}/v1/messages", self.base_url), anthropic_body(model, prompt))
                    .await?;
                let parsed = parse_anthropic(&p);
                (p, parsed)
            }
        };
        let (text, usage, finish_reason) =
            parsed.ok_or_else(|| self.transport(format!("unexpected response shape: {payload}")))?;
        Ok(ProviderReply {
            text,
            usage,
            finish_reason,
            duration_ms: Some(started.elapsed().as_millis() as u64),
        })
    }
}
