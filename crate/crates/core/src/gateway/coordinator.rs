use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use crate::adapter::prompt::{parse_followups, ResponseMode};
use crate::adapter::{CompletionRequest, CompletionResult, ModelAdapter, Prompt};
use crate::cache::embed::Embedder;
use crate::cache::{CachedType, DelegatedPut, EntryMeta, EntrySource, KeyGenConfig, SemanticCache};
use crate::catalog::Catalog;
use crate::context::ContextManager;
use crate::error::{Error, Result};
use crate::model::{count_tokens, MessageRecord, TokenUsage};
use crate::money::Usd;
use crate::service::{CachePolicy, CustomPolicy, ModelPolicy, ResolvedPolicy, ServiceBindings, ServiceType};
use crate::store::Store;
use crate::trace::{CallRole, Component, ModelCall, Trace};

use super::queue::{Ticket, UserQueues};

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyRequest {
    pub user_id: String,
    pub session_id: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub service_type: ServiceType,
    /// Overrides the model the service type would pick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_model: Option<String>,
    /// Re-answer the query of this earlier request of the same session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regenerate_of: Option<String>,
    /// `false` answers without adding the exchange to the session history.
    #[serde(default = "default_true")]
    pub update_context: bool,
}

impl ProxyRequest {
    pub fn new(user_id: &str, session_id: &str, query: &str, service_type: ServiceType) -> Self {
        ProxyRequest {
            user_id: user_id.into(),
            session_id: session_id.into(),
            query: query.into(),
            service_type,
            explicit_model: None,
            regenerate_of: None,
            update_context: true,
        }
    }

    pub fn regenerate(user_id: &str, session_id: &str, request_id: &str, service_type: ServiceType) -> Self {
        ProxyRequest {
            regenerate_of: Some(request_id.into()),
            ..Self::new(user_id, session_id, "", service_type)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostSummary {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: Usd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMetadata {
    pub model_used: String,
    pub context_messages_used: usize,
    pub cache_hit: bool,
    pub cache_mode: Option<ResponseMode>,
    /// Sum over every call in `component_trace`.
    pub cost: CostSummary,
    pub duration_ms: u64,
    pub service_type_effective: ServiceType,
    pub component_trace: Vec<ModelCall>,
    pub followups: Vec<String>,
    /// An answer was produced but some component fell back.
    pub degraded: bool,
    pub notes: Vec<String>,
    pub escalated: Option<bool>,
    pub smart_context_calls: usize,
    pub regenerated_from: Option<String>,
    pub persisted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyResponse {
    pub request_id: String,
    pub answer: String,
    pub metadata: ResponseMetadata,
}

/// A session record together with the record that replaced it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    #[serde(flatten)]
    pub record: MessageRecord,
    pub superseded_by: Option<String>,
}

struct Answer {
    text: String,
    model_id: String,
    usage: TokenUsage,
    cache_hit: bool,
    cache_mode: Option<ResponseMode>,
    context_used: usize,
    escalated: Option<bool>,
    smart_calls: usize,
}

/// Serves requests in the fixed order cache, context, model.
pub struct Coordinator {
    adapter: Arc<ModelAdapter>,
    store: Arc<dyn Store>,
    context: ContextManager,
    cache: Arc<SemanticCache>,
    bindings: ServiceBindings,
    queues: Arc<UserQueues>,
    prefetches: Mutex<HashMap<String, Vec<JoinHandle<()>>>>,
}

impl Coordinator {
    pub fn new(
        adapter: Arc<ModelAdapter>,
        store: Arc<dyn Store>,
        embedder: Arc<dyn Embedder>,
        bindings: ServiceBindings,
        queue_bound: usize,
    ) -> Result<Arc<Self>> {
        bindings.validate(adapter.catalog())?;
        let cache = SemanticCache::open(embedder.clone(), store.clone())?.with_delegate(
            adapter.clone(),
            KeyGenConfig {
                key_model: bindings.key_model.clone(),
                chunk_tokens: bindings.chunk_tokens,
                questions: bindings.keygen_questions,
            },
        );
        let context = ContextManager::new(store.clone(), adapter.clone(), embedder).with_models(
            &bindings.context_model,
            &bindings.summary_model,
            bindings.summary_cap_tokens,
        );
        Ok(Arc::new(Coordinator {
            adapter,
            store,
            context,
            cache: Arc::new(cache),
            bindings,
            queues: UserQueues::new(queue_bound),
            prefetches: Mutex::new(HashMap::new()),
        }))
    }

    pub fn adapter(&self) -> &ModelAdapter {
        &self.adapter
    }

    pub fn catalog(&self) -> &Catalog {
        self.adapter.catalog()
    }

    pub fn cache(&self) -> &SemanticCache {
        &self.cache
    }

    pub fn context(&self) -> &ContextManager {
        &self.context
    }

    pub fn bindings(&self) -> &ServiceBindings {
        &self.bindings
    }

    pub fn queues(&self) -> &UserQueues {
        &self.queues
    }

    /// Takes a place in the user's queue. Arrival order is the order of
    /// `enqueue` calls.
    pub fn enqueue(self: &Arc<Self>, req: ProxyRequest) -> Result<PendingRequest> {
        let ticket = self.queues.enqueue(&req.user_id)?;
        Ok(PendingRequest {
            coordinator: self.clone(),
            ticket,
            request: req,
        })
    }

    pub async fn handle(self: &Arc<Self>, req: ProxyRequest) -> Result<ProxyResponse> {
        self.enqueue(req)?.run().await
    }

    pub fn get_request(&self, request_id: &str) -> Result<MessageRecord> {
        self.store
            .get_record(request_id)?
            .ok_or_else(|| Error::NotFound(format!("request {request_id}")))
    }

    /// Every record of the session, superseded ones included.
    pub fn session(&self, user_id: &str, session_id: &str) -> Result<Vec<SessionEntry>> {
        let records = self.store.session_records(user_id, session_id)?;
        let replaced: HashMap<String, String> = records
            .iter()
            .filter_map(|r| r.supersedes.clone().map(|old| (old, r.request_id.clone())))
            .collect();
        Ok(records
            .into_iter()
            .map(|r| SessionEntry {
                superseded_by: replaced.get(&r.request_id).cloned(),
                record: r,
            })
            .collect())
    }

    /// Chunks a document into the cache with generated keys.
    pub async fn ingest(&self, document: &str) -> Result<(DelegatedPut, Trace)> {
        let mut trace = Trace::new();
        let out = self
            .cache
            .delegated_put(
                document,
                &self.bindings.key_model,
                self.bindings.chunk_tokens,
                self.bindings.keygen_questions,
                &mut trace,
            )
            .await?;
        Ok((out, trace))
    }

    /// Waits for follow-up answers still being prefetched for `user_id`.
    pub async fn wait_prefetch(&self, user_id: &str) {
        let handles = self.prefetches.lock().unwrap().remove(user_id).unwrap_or_default();
        for h in handles {
            let _ = h.await;
        }
    }

    fn resolve(&self, req: &ProxyRequest) -> Result<(ResolvedPolicy, ServiceType)> {
        let mut policy = self.bindings.resolve(&req.service_type, self.catalog())?;
        let mut effective = req.service_type.clone();
        if let Some(model) = &req.explicit_model {
            self.catalog().get(model)?;
            policy.model = ModelPolicy::Fixed(model.clone());
            effective = ServiceType::Custom(CustomPolicy {
                model: Some(model.clone()),
                plan: policy.plan.clone(),
                cache: policy.cache,
            });
        }
        Ok((policy, effective))
    }

    fn context_budget(&self, policy: &ModelPolicy, query: &str) -> Result<u64> {
        let window = match policy {
            ModelPolicy::Fixed(m) => self.catalog().get(m)?.context_window,
            ModelPolicy::Verification(v) => self
                .catalog()
                .get(&v.m1)?
                .context_window
                .min(self.catalog().get(&v.m2)?.context_window),
        };
        Ok(window.saturating_sub(count_tokens(query) + count_tokens(&self.bindings.system_instructions)))
    }

    async fn cache_stage(&self, policy: &ResolvedPolicy, query: &str, trace: &mut Trace) -> Option<Answer> {
        if policy.cache == CachePolicy::Off {
            return None;
        }
        if let Some(hit) = self.cache.exact(CachedType::Query, query) {
            return Some(Answer {
                text: hit.entry.object,
                model_id: hit.entry.metadata.model_id.unwrap_or_else(|| "cache".into()),
                usage: TokenUsage::ZERO,
                cache_hit: true,
                cache_mode: Some(ResponseMode::AsIs),
                context_used: 0,
                escalated: None,
                smart_calls: 0,
            });
        }
        if policy.cache != CachePolicy::Smart {
            return None;
        }
        // the cache stage runs before the context stage, so no history is shown
        match self
            .cache
            .smart_get(query, &[], &self.bindings.cache_model, self.bindings.smart_cache_k, trace)
            .await
        {
            Ok(Some(hit)) => {
                let usage = trace
                    .calls
                    .iter()
                    .rev()
                    .find(|c| c.role == CallRole::CacheAnswer)
                    .map(|c| c.usage)
                    .unwrap_or_default();
                Some(Answer {
                    text: hit.answer,
                    model_id: self.bindings.cache_model.clone(),
                    usage,
                    cache_hit: true,
                    cache_mode: Some(hit.mode),
                    context_used: 0,
                    escalated: None,
                    smart_calls: 0,
                })
            }
            Ok(None) => None,
            Err(e) => {
                trace.note(format!("smart cache lookup failed, treated as miss: {e}"));
                None
            }
        }
    }

    async fn model_stage(
        &self,
        req: &ProxyRequest,
        policy: &ResolvedPolicy,
        query: &str,
        before: Option<&str>,
        trace: &mut Trace,
        degraded: &mut bool,
    ) -> Result<Answer> {
        let history = self.context.history(&req.user_id, &req.session_id, before)?;
        let budget = self.context_budget(&policy.model, query)?;
        let outcome = self.context.apply_plan(&history, query, &policy.plan, budget, trace).await?;
        if !outcome.notes.is_empty() {
            *degraded = true;
        }
        let context_used = outcome.messages.len();
        let mut creq = CompletionRequest::new(query).with_context(outcome.messages);
        creq.system_instructions = self.bindings.system_instructions.clone();
        let (result, escalated): (CompletionResult, Option<bool>) = match &policy.model {
            ModelPolicy::Fixed(m) => {
                let r = self
                    .adapter
                    .call(m, creq.prompt(), Component::ModelAdapter, CallRole::Chat, trace)
                    .await?;
                (r, None)
            }
            ModelPolicy::Verification(v) => match self.adapter.select_with_verification(v, &creq, trace).await {
                Ok((r, sel)) => {
                    if sel.unparsable_verifier {
                        *degraded = true;
                    }
                    (r, Some(sel.escalated))
                }
                Err(Error::Escalation { fallback, source, .. }) => {
                    *degraded = true;
                    trace.note(format!("escalation failed, serving the cheap candidate: {source}"));
                    (*fallback, Some(true))
                }
                Err(e) => return Err(e),
            },
        };
        Ok(Answer {
            text: result.text,
            model_id: result.model_id,
            usage: result.usage,
            cache_hit: false,
            cache_mode: None,
            context_used,
            escalated,
            smart_calls: outcome.smart_calls,
        })
    }

    async fn generate_followups(&self, query: &str, answer: &str, trace: &mut Trace) -> Vec<String> {
        let n = self.bindings.followups;
        let reply = self
            .adapter
            .call(
                &self.bindings.cache_model,
                Prompt::followups(query, answer, n),
                Component::Coordinator,
                CallRole::Followups,
                trace,
            )
            .await;
        match reply {
            Ok(r) => parse_followups(&r.text, n),
            Err(e) => {
                trace.note(format!("follow-up generation failed: {e}"));
                Vec::new()
            }
        }
    }

    fn spawn_prefetch(&self, record: &MessageRecord, questions: &[String]) {
        let model = self.bindings.followup_model.clone().unwrap_or_else(|| record.model_id.clone());
        let adapter = self.adapter.clone();
        let cache = self.cache.clone();
        let user_id = record.user_id.clone();
        let record = record.clone();
        let questions = questions.to_vec();
        let sys = self.bindings.system_instructions.clone();
        let handle = tokio::spawn(async move {
            for q in questions {
                let mut trace = Trace::new();
                let prompt = Prompt::chat(&sys, std::slice::from_ref(&record), &q);
                match adapter
                    .call(&model, prompt, Component::Coordinator, CallRole::Chat, &mut trace)
                    .await
                {
                    Ok(r) => {
                        let meta = EntryMeta::new(EntrySource::Prefetch).with_model(&r.model_id);
                        if let Err(e) = cache.put_keys(&r.text, &[(CachedType::Query, q.clone())], meta).await {
                            tracing::warn!(error = %e, "storing prefetched answer failed");
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, question = %q, "prefetching follow-up failed"),
                }
            }
        });
        self.prefetches
            .lock()
            .unwrap()
            .entry(user_id)
            .or_default()
            .push(handle);
    }

    async fn process(&self, req: ProxyRequest) -> Result<ProxyResponse> {
        if req.user_id.is_empty() || req.session_id.is_empty() {
            return Err(Error::BadRequest("user_id and session_id are required".into()));
        }
        let (query, before) = match &req.regenerate_of {
            Some(id) => {
                let original = self
                    .store
                    .get_record(id)?
                    .filter(|r| r.user_id == req.user_id && r.session_id == req.session_id)
                    .ok_or_else(|| Error::NotFound(format!("request {id} in this session")))?;
                (original.query, Some(original.request_id))
            }
            None if req.query.trim().is_empty() => {
                return Err(Error::BadRequest("query must be non-empty".into()));
            }
            None => (req.query.clone(), None),
        };
        let (policy, effective) = self.resolve(&req)?;
        self.wait_prefetch(&req.user_id).await;

        let mut trace = Trace::new();
        let mut degraded = false;
        let cached = if before.is_none() {
            self.cache_stage(&policy, &query, &mut trace).await
        } else {
            None
        };
        let answer = match cached {
            Some(a) => a,
            None => {
                self.model_stage(&req, &policy, &query, before.as_deref(), &mut trace, &mut degraded)
                    .await?
            }
        };

        let followups = if policy.cache != CachePolicy::Off && self.bindings.followups > 0 && !answer.cache_hit {
            let f = self.generate_followups(&query, &answer.text, &mut trace).await;
            if f.is_empty() {
                degraded = true;
            }
            f
        } else {
            Vec::new()
        };
        if !trace.notes.is_empty() {
            degraded = true;
        }

        let usage = trace.usage();
        let total = trace.cost();
        let record_cost = if answer.usage == TokenUsage::ZERO {
            Usd::ZERO
        } else {
            self.catalog().cost_of(answer.usage, &answer.model_id)?
        };
        let request_id = uuid::Uuid::new_v4().to_string();
        let mut meta = BTreeMap::new();
        meta.insert("cache_hit".to_string(), answer.cache_hit.to_string());
        meta.insert("context_messages_used".to_string(), answer.context_used.to_string());
        meta.insert("total_cost_usd".to_string(), total.to_string());
        meta.insert("degraded".to_string(), degraded.to_string());
        if let Some(mode) = answer.cache_mode {
            meta.insert("cache_mode".to_string(), mode.as_str().to_string());
        }
        if !followups.is_empty() {
            meta.insert("followups".to_string(), followups.join("\n"));
        }
        let record = MessageRecord {
            request_id: request_id.clone(),
            user_id: req.user_id.clone(),
            session_id: req.session_id.clone(),
            query: query.clone(),
            response: answer.text.clone(),
            model_id: answer.model_id.clone(),
            usage: answer.usage,
            cost_usd: record_cost,
            timestamp: Utc::now(),
            duration_ms: trace.duration_ms(),
            service_type: effective.clone(),
            metadata: meta,
            supersedes: before.clone(),
            synthetic: false,
        };
        self.context.append_history(&record, req.update_context)?;
        if !followups.is_empty() {
            self.spawn_prefetch(&record, &followups);
        }

        Ok(ProxyResponse {
            request_id,
            answer: answer.text,
            metadata: ResponseMetadata {
                model_used: answer.model_id,
                context_messages_used: answer.context_used,
                cache_hit: answer.cache_hit,
                cache_mode: answer.cache_mode,
                cost: CostSummary {
                    input_tokens: usage.input_tokens,
                    output_tokens: usage.output_tokens,
                    usd: total,
                },
                duration_ms: trace.duration_ms(),
                service_type_effective: effective,
                component_trace: trace.calls,
                followups,
                degraded,
                notes: trace.notes,
                escalated: answer.escalated,
                smart_context_calls: answer.smart_calls,
                regenerated_from: before,
                persisted: req.update_context,
            },
        })
    }
}

/// A request holding its place in the user's queue.
pub struct PendingRequest {
    coordinator: Arc<Coordinator>,
    ticket: Ticket,
    request: ProxyRequest,
}

impl PendingRequest {
    pub fn ticket_number(&self) -> u64 {
        self.ticket.number()
    }

    pub async fn run(self) -> Result<ProxyResponse> {
        self.run_then(|_| ()).await
    }

    /// Waits for its turn, serves the request, and calls `deliver` before the
    /// next request of the same user may start.
    pub async fn run_then<F>(mut self, deliver: F) -> Result<ProxyResponse>
    where
        F: FnOnce(&Result<ProxyResponse>),
    {
        self.ticket.ready().await;
        let result = self.coordinator.process(self.request).await;
        deliver(&result);
        drop(self.ticket);
        result
    }
}
