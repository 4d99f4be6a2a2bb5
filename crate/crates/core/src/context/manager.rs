use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use crate::adapter::prompt::{parse_context_answer, ContextAnswer};
use crate::adapter::{ModelAdapter, Prompt};
use crate::cache::embed::{cosine, Embedder};
use crate::error::{Error, Result};
use crate::model::{count_tokens, tokens_for_words, MessageRecord};
use crate::store::Store;
use crate::trace::{CallRole, Component, Trace};

use super::filter::{ContextFilter, FilterPlan};

/// Result of assembling context for one request.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextOutcome {
    /// Chronological messages to send to the chat model.
    pub messages: Vec<MessageRecord>,
    /// Context-model calls made by smart-context filters.
    pub smart_calls: usize,
    /// Chains dropped because a filter failed.
    pub notes: Vec<String>,
}

/// A message tagged with its place in the history. Synthetic summaries sit
/// just after the newest message they summarize.
type Placed = ((usize, u8), MessageRecord);

pub struct ContextManager {
    store: Arc<dyn Store>,
    adapter: Arc<ModelAdapter>,
    embedder: Arc<dyn Embedder>,
    context_model: String,
    summary_model: String,
    summary_cap: u64,
}

impl ContextManager {
    pub fn new(store: Arc<dyn Store>, adapter: Arc<ModelAdapter>, embedder: Arc<dyn Embedder>) -> Self {
        ContextManager {
            store,
            adapter,
            embedder,
            context_model: "gpt-4o-mini".into(),
            summary_model: "gpt-4o-mini".into(),
            summary_cap: 256,
        }
    }

    pub fn with_models(mut self, context_model: &str, summary_model: &str, summary_cap: u64) -> Self {
        self.context_model = context_model.to_string();
        self.summary_model = summary_model.to_string();
        self.summary_cap = summary_cap.max(1);
        self
    }

    /// Chronological session history, optionally cut just before
    /// `before`, without superseded or synthetic records.
    pub fn history(&self, user_id: &str, session_id: &str, before: Option<&str>) -> Result<Vec<MessageRecord>> {
        let mut records = self.store.session_records(user_id, session_id)?;
        if let Some(cut) = before {
            let pos = records
                .iter()
                .position(|r| r.request_id == cut)
                .ok_or_else(|| Error::NotFound(format!("request {cut} in session {session_id}")))?;
            records.truncate(pos);
        }
        let superseded: HashSet<String> = records.iter().filter_map(|r| r.supersedes.clone()).collect();
        records.retain(|r| !r.synthetic && !superseded.contains(&r.request_id));
        Ok(records)
    }

    pub fn append_history(&self, record: &MessageRecord, update: bool) -> Result<()> {
        if !update {
            return Ok(());
        }
        if record.synthetic {
            return Err(Error::Precondition("synthetic records are never persisted".into()));
        }
        self.store.append_record(record)
    }

    /// Applies `plan` to the session history. `budget` is the number of
    /// tokens available for context when the plan is empty.
    pub async fn get_context(
        &self,
        user_id: &str,
        session_id: &str,
        query: &str,
        plan: &FilterPlan,
        budget: u64,
        trace: &mut Trace,
    ) -> Result<ContextOutcome> {
        let history = self.history(user_id, session_id, None)?;
        self.apply_plan(&history, query, plan, budget, trace).await
    }

    pub async fn apply_plan(
        &self,
        history: &[MessageRecord],
        query: &str,
        plan: &FilterPlan,
        budget: u64,
        trace: &mut Trace,
    ) -> Result<ContextOutcome> {
        let mut outcome = ContextOutcome::default();
        if plan.is_full() {
            outcome.messages = fit_newest(history, budget);
            return Ok(outcome);
        }
        let placed: Vec<Placed> = history.iter().cloned().enumerate().map(|(i, m)| ((i, 0), m)).collect();
        let mut joined: BTreeMap<(usize, u8), MessageRecord> = BTreeMap::new();
        let mut seen = HashSet::new();
        for (g, chain) in plan.groups.iter().enumerate() {
            match self.run_chain(chain, placed.clone(), query, &mut outcome.smart_calls, trace).await {
                Ok(out) => {
                    for (pos, m) in out {
                        if seen.insert(m.request_id.clone()) {
                            joined.insert(pos, m);
                        }
                    }
                }
                Err(e) => {
                    let note = format!("context group {} dropped: {e}", g + 1);
                    trace.note(note.clone());
                    outcome.notes.push(note);
                }
            }
        }
        outcome.messages = joined.into_values().collect();
        Ok(outcome)
    }

    async fn run_chain(
        &self,
        chain: &[ContextFilter],
        mut current: Vec<Placed>,
        query: &str,
        smart_calls: &mut usize,
        trace: &mut Trace,
    ) -> Result<Vec<Placed>> {
        for filter in chain {
            current = match filter {
                ContextFilter::LastK(k) => {
                    let mut by_recency: Vec<(usize, u8)> = current.iter().map(|(p, _)| *p).collect();
                    by_recency.sort_unstable_by(|a, b| b.cmp(a));
                    let keep: HashSet<(usize, u8)> = by_recency.into_iter().take(*k).collect();
                    current.into_iter().filter(|(p, _)| keep.contains(p)).collect()
                }
                ContextFilter::SmartContext(model) => {
                    let model = model.as_deref().unwrap_or(&self.context_model);
                    let messages: Vec<MessageRecord> = current.iter().map(|(_, m)| m.clone()).collect();
                    let (needed, calls) = self.smart_context_decide(model, &messages, query, trace).await?;
                    *smart_calls += calls;
                    if needed {
                        current
                    } else {
                        Vec::new()
                    }
                }
                ContextFilter::Similar(theta) => self.similar_placed(*theta, current, query).await?,
                ContextFilter::Summarize(model) => {
                    let model = model.as_deref().unwrap_or(&self.summary_model).to_string();
                    let Some(last_pos) = current.iter().map(|(p, _)| p.0).max() else {
                        continue;
                    };
                    let messages: Vec<MessageRecord> = current.into_iter().map(|(_, m)| m).collect();
                    self.summarize_filter(&model, &messages, query, trace)
                        .await?
                        .into_iter()
                        .map(|m| ((last_pos, 1), m))
                        .collect()
                }
            };
        }
        Ok(current)
    }

    /// Whether `query` needs `candidate` as context, and how many calls that
    /// took. Asks once; a "standalone" answer is confirmed by a second call.
    /// Unreadable or failed answers count as "needed".
    pub async fn smart_context_decide(
        &self,
        context_model: &str,
        candidate: &[MessageRecord],
        query: &str,
        trace: &mut Trace,
    ) -> Result<(bool, usize)> {
        if candidate.is_empty() {
            return Ok((false, 0));
        }
        for attempt in 0..2u8 {
            let reply = self
                .adapter
                .call(
                    context_model,
                    Prompt::context_decision(candidate, query, attempt),
                    Component::ContextManager,
                    CallRole::ContextDecision,
                    trace,
                )
                .await;
            let answer = match reply {
                Ok(r) => parse_context_answer(&r.text),
                Err(e) if e.is_retryable() => {
                    trace.note(format!("context model failed, keeping context: {e}"));
                    None
                }
                Err(e) => return Err(e),
            };
            if answer != Some(ContextAnswer::Standalone) {
                return Ok((true, attempt as usize + 1));
            }
        }
        Ok((false, 2))
    }

    /// Messages whose query is more similar to `query` than `theta`, most
    /// similar first, newer first on ties.
    pub async fn similar_filter(&self, theta: f64, history: &[MessageRecord], query: &str) -> Result<Vec<MessageRecord>> {
        let placed = history.iter().cloned().enumerate().map(|(i, m)| ((i, 0), m)).collect();
        Ok(self
            .similar_placed(theta, placed, query)
            .await?
            .into_iter()
            .map(|(_, m)| m)
            .collect())
    }

    async fn similar_placed(&self, theta: f64, current: Vec<Placed>, query: &str) -> Result<Vec<Placed>> {
        let current: Vec<Placed> = current.into_iter().filter(|(_, m)| !m.synthetic).collect();
        if current.is_empty() {
            return Ok(current);
        }
        let mut texts = vec![query.to_string()];
        texts.extend(current.iter().map(|(_, m)| m.query.clone()));
        let vectors = self
            .embedder
            .embed(&texts)
            .await
            .map_err(|e| Error::Filter(format!("similar: {e}")))?;
        if vectors.len() != texts.len() {
            return Err(Error::Filter("similar: embedder returned too few vectors".into()));
        }
        let mut scored: Vec<(f64, Placed)> = current
            .into_iter()
            .zip(&vectors[1..])
            .map(|(p, v)| (cosine(&vectors[0], v), p))
            .filter(|(s, _)| *s > theta)
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1 .0.cmp(&a.1 .0)));
        Ok(scored.into_iter().map(|(_, p)| p).collect())
    }

    /// One synthetic message summarizing `history`, capped at the
    /// configured token length.
    pub async fn summarize_filter(
        &self,
        summary_model: &str,
        history: &[MessageRecord],
        query: &str,
        trace: &mut Trace,
    ) -> Result<Vec<MessageRecord>> {
        let Some(last) = history.last() else {
            return Ok(Vec::new());
        };
        let cap_words = (self.summary_cap * 10 / 13).max(1);
        let reply = self
            .adapter
            .call(
                summary_model,
                Prompt::summarize(history, query, cap_words),
                Component::ContextManager,
                CallRole::Summarize,
                trace,
            )
            .await
            .map_err(|e| Error::Filter(format!("summarize: {e}")))?;
        let summary = truncate_tokens(reply.text.trim(), self.summary_cap);
        Ok(vec![MessageRecord {
            request_id: format!("summary:{}", last.request_id),
            user_id: last.user_id.clone(),
            session_id: last.session_id.clone(),
            query: String::new(),
            response: summary,
            model_id: reply.model_id.clone(),
            usage: reply.usage,
            cost_usd: self.adapter.catalog().cost_of(reply.usage, &reply.model_id)?,
            timestamp: last.timestamp,
            duration_ms: reply.duration_ms,
            service_type: last.service_type.clone(),
            metadata: BTreeMap::from([("summarized_messages".to_string(), history.len().to_string())]),
            supersedes: None,
            synthetic: true,
        }])
    }
}

/// Newest messages whose query and response tokens fit in `budget`,
/// returned chronologically.
pub fn fit_newest(history: &[MessageRecord], budget: u64) -> Vec<MessageRecord> {
    let mut used = 0u64;
    let mut start = history.len();
    for (i, m) in history.iter().enumerate().rev() {
        let cost = count_tokens(&m.query) + count_tokens(&m.response);
        if used + cost > budget {
            break;
        }
        used += cost;
        start = i;
    }
    history[start..].to_vec()
}

fn truncate_tokens(text: &str, cap: u64) -> String {
    if count_tokens(text) <= cap {
        return text.to_string();
    }
    let words: Vec<&str> = text.split_whitespace().collect();
    let mut n = words.len();
    while n > 0 && tokens_for_words(n as u64) > cap {
        n -= 1;
    }
    words[..n].join(" ")
}
