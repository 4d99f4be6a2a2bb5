//! Unified completion interface over heterogeneous providers.
//!
//! Callers describe a request in provider-neutral terms; the adapter resolves
//! the model in the catalog, checks the context window, dispatches to the
//! provider backend registered for the model's `provider_id`, and records the
//! call (usage, cost, latency) in the request [`Trace`].

pub mod http;
pub mod judge;
pub mod mock;
pub mod prompt;
pub mod selection;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::model::{cost_of, count_tokens, MessageRecord, ModelSpec, TokenUsage};
use crate::trace::{CallRole, Component, ModelCall, Trace};

pub use prompt::{Prompt, Task, Turn};
pub use selection::{SelectionTrace, VerificationPolicy};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseFormat {
    #[default]
    Text,
    Structured,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, Default)]
pub struct CompletionRequest {
    /// Explicit model id; `None` delegates the choice to the adapter.
    pub model: Option<String>,
    pub system_instructions: String,
    pub context: Vec<MessageRecord>,
    pub query: String,
    pub response_format: ResponseFormat,
    pub temperature: f32,
}

impl CompletionRequest {
    pub fn new(query: impl Into<String>) -> Self {
        CompletionRequest {
            query: query.into(),
            ..Default::default()
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = Some(model.into());
        self
    }

    pub fn with_context(mut self, context: Vec<MessageRecord>) -> Self {
        self.context = context;
        self
    }

    pub fn prompt(&self) -> Prompt {
        Prompt::chat(&self.system_instructions, &self.context, &self.query)
            .with_format(self.response_format)
            .with_temperature(self.temperature)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub model_id: String,
    pub usage: TokenUsage,
    pub duration_ms: u64,
    pub finish_reason: FinishReason,
}

/// What a backend returns for one call.
#[derive(Debug, Clone)]
pub struct ProviderReply {
    pub text: String,
    /// Provider-reported usage; `None` falls back to [`count_tokens`].
    pub usage: Option<TokenUsage>,
    pub finish_reason: FinishReason,
    /// Provider-reported or synthetic latency; `None` uses wall time.
    pub duration_ms: Option<u64>,
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;

    async fn send(&self, model: &ModelSpec, prompt: &Prompt) -> Result<ProviderReply>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    /// Retries after the first attempt, transport errors only.
    pub retries: u32,
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            retries: 1,
            base_backoff: Duration::from_millis(200),
        }
    }
}

struct Backend {
    provider: Arc<dyn Provider>,
    permits: Arc<Semaphore>,
}

pub struct ModelAdapter {
    catalog: Arc<Catalog>,
    backends: HashMap<String, Backend>,
    fallback: Option<Backend>,
    retry: RetryPolicy,
    delegation: Option<VerificationPolicy>,
}

const DEFAULT_CONCURRENCY: usize = 32;

impl ModelAdapter {
    pub fn new(catalog: Arc<Catalog>) -> Self {
        ModelAdapter {
            catalog,
            backends: HashMap::new(),
            fallback: None,
            retry: RetryPolicy::default(),
            delegation: None,
        }
    }

    /// Serves every model in the catalog from one provider, e.g. the mock.
    pub fn with_fallback(mut self, provider: Arc<dyn Provider>) -> Self {
        self.fallback = Some(Backend {
            provider,
            permits: Arc::new(Semaphore::new(DEFAULT_CONCURRENCY)),
        });
        self
    }

    pub fn with_provider(self, provider: Arc<dyn Provider>) -> Self {
        self.with_provider_limited(provider, DEFAULT_CONCURRENCY)
    }

    pub fn with_provider_limited(mut self, provider: Arc<dyn Provider>, max_in_flight: usize) -> Self {
        let id = provider.id().to_string();
        self.backends.insert(
            id,
            Backend {
                provider,
                permits: Arc::new(Semaphore::new(max_in_flight.max(1))),
            },
        );
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_delegation(mut self, policy: VerificationPolicy) -> Result<Self> {
        policy.validate(&self.catalog)?;
        self.delegation = Some(policy);
        Ok(self)
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn catalog_arc(&self) -> Arc<Catalog> {
        self.catalog.clone()
    }

    pub fn delegation(&self) -> Option<&VerificationPolicy> {
        self.delegation.as_ref()
    }

    /// Runs a chat completion. An explicit model is called directly; an
    /// absent model goes through verification-based selection.
    pub async fn complete(&self, req: &CompletionRequest, trace: &mut Trace) -> Result<CompletionResult> {
        match &req.model {
            Some(model) => {
                self.call(model, req.prompt(), Component::ModelAdapter, CallRole::Chat, trace)
                    .await
            }
            None => {
                let policy = self.delegation.as_ref().ok_or_else(|| {
                    Error::BadRequest("no model given and no selection policy configured".into())
                })?;
                let (result, _) = self.select_with_verification(policy, req, trace).await?;
                Ok(result)
            }
        }
    }

    /// One model call with window check, retries and trace bookkeeping.
    pub async fn call(
        &self,
        model_id: &str,
        prompt: Prompt,
        component: Component,
        role: CallRole,
        trace: &mut Trace,
    ) -> Result<CompletionResult> {
        let spec = self.catalog.get(model_id)?;
        let tokens = prompt.prompt_tokens();
        if tokens > spec.context_window {
            return Err(Error::ContextOverflow {
                model: spec.model_id.clone(),
                tokens,
                window: spec.context_window,
            });
        }
        let backend = self
            .backends
            .get(&spec.provider_id)
            .or(self.fallback.as_ref())
            .ok_or_else(|| Error::Config(format!("no backend for provider {}", spec.provider_id)))?;

        let mut attempt = 0;
        loop {
            let started = Instant::now();
            let outcome = {
                let _permit = backend
                    .permits
                    .acquire()
                    .await
                    .map_err(|_| Error::Config("provider closed".into()))?;
                backend.provider.send(spec, &prompt).await
            };
            match outcome {
                Ok(reply) => {
                    let usage = reply
                        .usage
                        .unwrap_or_else(|| TokenUsage::new(tokens, count_tokens(&reply.text)));
                    let duration_ms = reply
                        .duration_ms
                        .unwrap_or_else(|| started.elapsed().as_millis() as u64);
                    trace.record(ModelCall {
                        component,
                        role,
                        model_id: spec.model_id.clone(),
                        usage,
                        cost_usd: cost_of(usage, spec),
                        duration_ms,
                        ok: true,
                        note: None,
                    });
                    return Ok(CompletionResult {
                        text: reply.text,
                        model_id: spec.model_id.clone(),
                        usage,
                        duration_ms,
                        finish_reason: reply.finish_reason,
                    });
                }
                Err(e) if e.is_retryable() && attempt < self.retry.retries => {
                    tracing::warn!(model = %spec.model_id, attempt, error = %e, "retrying model call");
                    let backoff = self.retry.base_backoff * 2u32.pow(attempt);
                    attempt += 1;
                    if !backoff.is_zero() {
                        tokio::time::sleep(backoff).await;
                    }
                }
                Err(e) => {
                    trace.record(ModelCall {
                        component,
                        role,
                        model_id: spec.model_id.clone(),
                        usage: TokenUsage::ZERO,
                        cost_usd: Default::default(),
                        duration_ms: started.elapsed().as_millis() as u64,
                        ok: false,
                        note: Some(e.to_string()),
                    });
                    return Err(e);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::mock::{MockConfig, MockProvider, MockRule};
    use super::*;

    fn adapter(cfg: MockConfig) -> (ModelAdapter, Arc<MockProvider>) {
        let mock = Arc::new(MockProvider::new(cfg));
        let adapter = ModelAdapter::new(Arc::new(Catalog::builtin()))
            .with_fallback(mock.clone())
            .with_retry(RetryPolicy {
                retries: 1,
                base_backoff: Duration::ZERO,
            });
        (adapter, mock)
    }

    #[tokio::test]
    async fn explicit_mock_model_echoes_canned_response() {
        let (adapter, _) = adapter(MockConfig::default().rule(MockRule::exact("ping").response("pong")));
        let mut trace = Trace::new();
        let req = CompletionRequest::new("ping").with_model("gpt-4o");
        let out = adapter.complete(&req, &mut trace).await.unwrap();
        assert_eq!(out.text, "pong");
        assert_eq!(out.usage, TokenUsage::new(count_tokens("ping"), count_tokens("pong")));
        assert_eq!(out.finish_reason, FinishReason::Complete);
        assert_eq!(trace.calls.len(), 1);
        assert_eq!(
            trace.cost(),
            adapter.catalog().cost_of(out.usage, "gpt-4o").unwrap()
        );
    }

    #[tokio::test]
    async fn oversized_prompt_is_a_size_error() {
        let (adapter, mock) = adapter(MockConfig::default());
        // titan-text-lite has a 4000 token window
        let query = vec!["word"; 4000].join(" ");
        let req = CompletionRequest::new(query).with_model("titan-text-lite");
        let err = adapter.complete(&req, &mut Trace::new()).await.unwrap_err();
        assert!(matches!(err, Error::ContextOverflow { window: 4000, .. }));
        assert!(!err.is_retryable());
        assert!(mock.calls().is_empty());
    }

    #[tokio::test]
    async fn unknown_model_is_catalog_miss() {
        let (adapter, _) = adapter(MockConfig::default());
        let req = CompletionRequest::new("hi").with_model("gpt-17");
        let err = adapter.complete(&req, &mut Trace::new()).await.unwrap_err();
        assert!(matches!(err, Error::CatalogMiss(_)));
    }

    #[tokio::test]
    async fn transport_errors_are_retried_once_then_surfaced() {
        let (adapter, mock) = adapter(MockConfig::default().rule(MockRule::exact("flaky").fail()));
        let req = CompletionRequest::new("flaky").with_model("gpt-4o");
        let mut trace = Trace::new();
        let err = adapter.complete(&req, &mut trace).await.unwrap_err();
        assert!(err.is_retryable());
        assert_eq!(mock.calls().len(), 2);
        assert_eq!(trace.calls.len(), 1);
        assert!(!trace.calls[0].ok);
    }

    #[tokio::test]
    async fn delegation_without_policy_is_rejected() {
        let (adapter, _) = adapter(MockConfig::default());
        let err = adapter
            .complete(&CompletionRequest::new("hi"), &mut Trace::new())
            .await
            .unwrap_err();
        assert!(matches!(err, Error::BadRequest(_)));
    }

    #[tokio::test]
    async fn switching_providers_keeps_the_request_contract() {
        let (adapter, _) = adapter(MockConfig::default());
        let req = CompletionRequest::new("same question");
        let mut a = Trace::new();
        let mut b = Trace::new();
        let x = adapter.complete(&req.clone().with_model("gpt-4o"), &mut a).await.unwrap();
        let y = adapter.complete(&req.with_model("claude-3-haiku"), &mut b).await.unwrap();
        assert_ne!(x.model_id, y.model_id);
        assert_eq!(x.usage.input_tokens, y.usage.input_tokens);
    }
}
