//! Semantic cache with typed keys.
//!
//! Every entry stores one object under one or more keys. A key has a
//! [`CachedType`] and a text, which is embedded; lookups embed the probe once
//! and scan all keys (exact brute force). Writes go through a single writer
//! and become visible all at once, so readers never see half an entry and a
//! failed put leaves the index unchanged.

pub mod chunk;
pub mod embed;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapter::prompt::{parse_cache_verdict, parse_keys, CacheVerdict, ResponseMode};
use crate::adapter::{ModelAdapter, Prompt, ResponseFormat};
use crate::error::{Error, Result};
use crate::model::MessageRecord;
use crate::store::Store;
use crate::trace::{CallRole, Component, Trace};
use embed::{cosine, Embedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachedType {
    Query,
    Response,
    Context,
    Document,
    Chunk,
    HypotheticalQuestion,
    Keywords,
    Summary,
    FactList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntrySource {
    LlmInteraction,
    ExternalDocument,
    Prefetch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub model_id: Option<String>,
    pub created_at: DateTime<Utc>,
    pub response_format: ResponseFormat,
    pub source: EntrySource,
    /// Shared by the entries derived from one document chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    /// Stored without generated keys because the key model failed.
    #[serde(default)]
    pub degraded: bool,
}

impl EntryMeta {
    pub fn new(source: EntrySource) -> Self {
        EntryMeta {
            model_id: None,
            created_at: Utc::now(),
            response_format: ResponseFormat::Text,
            source,
            group_id: None,
            degraded: false,
        }
    }

    pub fn with_model(mut self, model_id: &str) -> Self {
        self.model_id = Some(model_id.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheKey {
    pub cached_type: CachedType,
    pub text: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub entry_id: String,
    pub object: String,
    pub keys: Vec<CacheKey>,
    pub metadata: EntryMeta,
}

/// One lookup constraint set; a hit must satisfy every field that is set.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GetFilter {
    pub cached_type: Option<CachedType>,
    pub min_similarity: Option<f64>,
    pub max_items: Option<usize>,
}

impl GetFilter {
    pub fn of_type(t: CachedType) -> Self {
        GetFilter {
            cached_type: Some(t),
            ..Default::default()
        }
    }

    pub fn above(s: f64) -> Self {
        GetFilter {
            min_similarity: Some(s),
            ..Default::default()
        }
    }

    pub fn top(k: usize) -> Self {
        GetFilter {
            max_items: Some(k),
            ..Default::default()
        }
    }

    pub fn with_type(mut self, t: CachedType) -> Self {
        self.cached_type = Some(t);
        self
    }

    pub fn with_min(mut self, s: f64) -> Self {
        self.min_similarity = Some(s);
        self
    }

    pub fn with_max(mut self, k: usize) -> Self {
        self.max_items = Some(k);
        self
    }

    fn validate(&self) -> Result<()> {
        if self.cached_type.is_none() && self.min_similarity.is_none() && self.max_items.is_none() {
            return Err(Error::Precondition("a get filter needs at least one constraint".into()));
        }
        if let Some(s) = self.min_similarity {
            if !(-1.0..=1.0).contains(&s) {
                return Err(Error::Precondition(format!("similarity threshold {s} outside [-1, 1]")));
            }
        }
        if self.max_items == Some(0) {
            return Err(Error::Precondition("max_items must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHit {
    pub entry: CacheEntry,
    pub matched_type: CachedType,
    pub matched_key: String,
    pub similarity: f64,
    pub response_mode: ResponseMode,
}

/// A delegated lookup that the cache model judged relevant.
#[derive(Debug, Clone, PartialEq)]
pub struct SmartHit {
    pub answer: String,
    pub hit: CacheHit,
    pub mode: ResponseMode,
    /// Items retrieved and shown to the cache model.
    pub retrieved: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelegatedPut {
    pub entry_ids: Vec<String>,
    pub chunks: usize,
    /// Chunks stored with a chunk key only.
    pub degraded: usize,
}

/// Settings for key generation when `put` is called without keys.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyGenConfig {
    pub key_model: String,
    pub chunk_tokens: u64,
    pub questions: usize,
}

#[derive(Default)]
struct Index {
    entries: Vec<Arc<CacheEntry>>,
    exact: HashMap<(CachedType, String), usize>,
}

impl Index {
    fn push(&mut self, entry: CacheEntry) {
        let idx = self.entries.len();
        for k in &entry.keys {
            self.exact.insert((k.cached_type, k.text.clone()), idx);
        }
        self.entries.push(Arc::new(entry));
    }
}

/// Object, keys and metadata of an entry not yet embedded.
type PendingEntry = (String, Vec<(CachedType, String)>, EntryMeta);

pub struct SemanticCache {
    embedder: Arc<dyn Embedder>,
    index: RwLock<Index>,
    writer: tokio::sync::Mutex<()>,
    store: Option<Arc<dyn Store>>,
    adapter: Option<Arc<ModelAdapter>>,
    keygen: Option<KeyGenConfig>,
}

impl SemanticCache {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        SemanticCache {
            embedder,
            index: RwLock::new(Index::default()),
            writer: tokio::sync::Mutex::new(()),
            store: None,
            adapter: None,
            keygen: None,
        }
    }

    /// Loads existing entries from `store` and persists new ones to it.
    pub fn open(embedder: Arc<dyn Embedder>, store: Arc<dyn Store>) -> Result<Self> {
        let mut cache = Self::new(embedder);
        {
            let mut index = cache.index.write().unwrap();
            for e in store.cache_entries()? {
                index.push(e);
            }
        }
        cache.store = Some(store);
        Ok(cache)
    }

    /// Enables delegated put/get through `adapter`.
    pub fn with_delegate(mut self, adapter: Arc<ModelAdapter>, keygen: KeyGenConfig) -> Self {
        self.adapter = Some(adapter);
        self.keygen = Some(keygen);
        self
    }

    pub fn embedder(&self) -> Arc<dyn Embedder> {
        self.embedder.clone()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key_count(&self) -> usize {
        self.index.read().unwrap().entries.iter().map(|e| e.keys.len()).sum()
    }

    pub fn entries(&self) -> Vec<CacheEntry> {
        self.index.read().unwrap().entries.iter().map(|e| (**e).clone()).collect()
    }

    fn delegate(&self) -> Result<&ModelAdapter> {
        self.adapter
            .as_deref()
            .ok_or_else(|| Error::Config("cache has no model adapter for delegated operations".into()))
    }

    async fn build(&self, object: &str, keys: &[(CachedType, String)], meta: EntryMeta) -> Result<CacheEntry> {
        let mut built = self.build_many(vec![(object.to_string(), keys.to_vec(), meta)]).await?;
        Ok(built.remove(0))
    }

    /// Embeds every key of every pending entry in one batch.
    async fn build_many(&self, pending: Vec<PendingEntry>) -> Result<Vec<CacheEntry>> {
        for (object, keys, _) in &pending {
            if object.trim().is_empty() {
                return Err(Error::Precondition("cache object must be non-empty".into()));
            }
            if keys.is_empty() {
                return Err(Error::Precondition("cache entry needs at least one key".into()));
            }
        }
        let texts: Vec<String> = pending
            .iter()
            .flat_map(|(_, keys, _)| keys.iter().map(|(_, t)| t.clone()))
            .collect();
        let vectors = self.embedder.embed(&texts).await?;
        if vectors.len() != texts.len() || vectors.iter().any(|v| v.len() != self.embedder.dim()) {
            return Err(Error::Embedder("embedder returned vectors of the wrong shape".into()));
        }
        let mut vectors = vectors.into_iter();
        Ok(pending
            .into_iter()
            .map(|(object, keys, metadata)| CacheEntry {
                entry_id: uuid::Uuid::new_v4().to_string(),
                object,
                keys: keys
                    .into_iter()
                    .map(|(cached_type, text)| CacheKey {
                        cached_type,
                        text,
                        embedding: vectors.next().unwrap(),
                    })
                    .collect(),
                metadata,
            })
            .collect())
    }

    async fn commit(&self, entries: Vec<CacheEntry>) -> Result<Vec<String>> {
        let _writer = self.writer.lock().await;
        if let Some(store) = &self.store {
            for e in &entries {
                store.put_cache_entry(e)?;
            }
        }
        let ids = entries.iter().map(|e| e.entry_id.clone()).collect();
        let mut index = self.index.write().unwrap();
        for e in entries {
            index.push(e);
        }
        Ok(ids)
    }

    /// Stores `object` under explicit keys.
    pub async fn put_keys(&self, object: &str, keys: &[(CachedType, String)], meta: EntryMeta) -> Result<String> {
        let entry = self.build(object, keys, meta).await?;
        Ok(self.commit(vec![entry]).await?.remove(0))
    }

    /// Stores `object` under `keys`, or generates keys when none are given.
    pub async fn put(
        &self,
        object: &str,
        keys: Option<&[(CachedType, String)]>,
        meta: EntryMeta,
        trace: &mut Trace,
    ) -> Result<Vec<String>> {
        match keys {
            Some(keys) => Ok(vec![self.put_keys(object, keys, meta).await?]),
            None => {
                let cfg = self
                    .keygen
                    .clone()
                    .ok_or_else(|| Error::Config("no key model configured for delegated put".into()))?;
                let out = self
                    .delegated_put(object, &cfg.key_model, cfg.chunk_tokens, cfg.questions, trace)
                    .await?;
                Ok(out.entry_ids)
            }
        }
    }

    /// Splits `document` into chunks and stores each under a chunk key,
    /// generated question keys and a keyword key, plus a summary entry and a
    /// fact-list entry derived from the chunk.
    pub async fn delegated_put(
        &self,
        document: &str,
        key_model: &str,
        chunk_tokens: u64,
        questions: usize,
        trace: &mut Trace,
    ) -> Result<DelegatedPut> {
        if document.trim().is_empty() {
            return Err(Error::Precondition("document must be non-empty".into()));
        }
        let adapter = self.delegate()?;
        let chunks = chunk::chunk_document(document, chunk_tokens);
        let mut pending = Vec::new();
        let mut degraded = 0;
        for c in &chunks {
            let reply = adapter
                .call(key_model, Prompt::key_gen(c, questions), Component::Cache, CallRole::KeyGen, trace)
                .await;
            let keys = reply.ok().and_then(|r| parse_keys(&r.text));
            let group = uuid::Uuid::new_v4().to_string();
            let mut meta = EntryMeta::new(EntrySource::ExternalDocument).with_model(key_model);
            meta.group_id = Some(group);
            let Some(keys) = keys else {
                degraded += 1;
                trace.note("key generation failed for a chunk; stored with its chunk key only");
                meta.degraded = true;
                pending.push((c.clone(), vec![(CachedType::Chunk, c.clone())], meta));
                continue;
            };
            let mut main = vec![(CachedType::Chunk, c.clone())];
            main.extend(keys.questions.iter().map(|q| (CachedType::HypotheticalQuestion, q.clone())));
            main.push((CachedType::Keywords, keys.keywords.join(", ")));
            let facts = keys.facts.join("\n");
            pending.push((c.clone(), main, meta.clone()));
            pending.push((keys.summary.clone(), vec![(CachedType::Summary, keys.summary)], meta.clone()));
            pending.push((facts.clone(), vec![(CachedType::FactList, facts)], meta));
        }
        let entries = self.build_many(pending).await?;
        Ok(DelegatedPut {
            entry_ids: self.commit(entries).await?,
            chunks: chunks.len(),
            degraded,
        })
    }

    /// Exact key-text match, no embedding.
    pub fn exact(&self, cached_type: CachedType, text: &str) -> Option<CacheHit> {
        let index = self.index.read().unwrap();
        let idx = *index.exact.get(&(cached_type, text.to_string()))?;
        Some(CacheHit {
            entry: (*index.entries[idx]).clone(),
            matched_type: cached_type,
            matched_key: text.to_string(),
            similarity: 1.0,
            response_mode: ResponseMode::AsIs,
        })
    }

    /// Hits satisfying every constraint of at least one filter, best key per
    /// entry, in descending similarity.
    pub async fn get(&self, probe: &str, filters: &[GetFilter]) -> Result<Vec<CacheHit>> {
        if filters.is_empty() {
            return Err(Error::Precondition("get needs at least one filter".into()));
        }
        for f in filters {
            f.validate()?;
        }
        let snapshot: Vec<Arc<CacheEntry>> = self.index.read().unwrap().entries.clone();
        if snapshot.is_empty() {
            return Ok(Vec::new());
        }
        let probe_vec = self
            .embedder
            .embed(&[probe.to_string()])
            .await?
            .pop()
            .ok_or_else(|| Error::Embedder("embedder returned no vector".into()))?;

        // (entry index, key index, similarity) for every key
        let scored: Vec<(usize, usize, f64)> = snapshot
            .iter()
            .enumerate()
            .flat_map(|(ei, e)| {
                let probe_vec = &probe_vec;
                e.keys
                    .iter()
                    .enumerate()
                    .map(move |(ki, k)| (ei, ki, cosine(probe_vec, &k.embedding)))
            })
            .collect();

        let mut best: HashMap<usize, (usize, f64)> = HashMap::new();
        for f in filters {
            let mut per_entry: HashMap<usize, (usize, f64)> = HashMap::new();
            for &(ei, ki, sim) in &scored {
                let key = &snapshot[ei].keys[ki];
                if f.cached_type.is_some_and(|t| t != key.cached_type) {
                    continue;
                }
                if f.min_similarity.is_some_and(|s| sim <= s) {
                    continue;
                }
                let slot = per_entry.entry(ei).or_insert((ki, sim));
                if sim > slot.1 {
                    *slot = (ki, sim);
                }
            }
            let mut ranked: Vec<(usize, (usize, f64))> = per_entry.into_iter().collect();
            sort_hits(&mut ranked);
            if let Some(k) = f.max_items {
                ranked.truncate(k);
            }
            for (ei, (ki, sim)) in ranked {
                let slot = best.entry(ei).or_insert((ki, sim));
                if sim > slot.1 {
                    *slot = (ki, sim);
                }
            }
        }
        let mut ranked: Vec<(usize, (usize, f64))> = best.into_iter().collect();
        sort_hits(&mut ranked);
        Ok(ranked
            .into_iter()
            .map(|(ei, (ki, sim))| {
                let entry = (*snapshot[ei]).clone();
                let key = &entry.keys[ki];
                CacheHit {
                    matched_type: key.cached_type,
                    matched_key: key.text.clone(),
                    similarity: sim,
                    response_mode: ResponseMode::AsIs,
                    entry,
                }
            })
            .collect())
    }

    /// Retrieves the top `k` items across all cached types and lets the
    /// cache model decide whether one of them answers `query`. `None` is a
    /// miss; cache-model failures are misses noted in the trace.
    pub async fn smart_get(
        &self,
        query: &str,
        context: &[MessageRecord],
        cache_model: &str,
        k: usize,
        trace: &mut Trace,
    ) -> Result<Option<SmartHit>> {
        if self.is_empty() {
            return Ok(None);
        }
        let adapter = self.delegate()?;
        let hits = match self.get(query, &[GetFilter::top(k.max(1))]).await {
            Ok(h) => h,
            Err(e) => {
                trace.note(format!("cache retrieval failed, treated as miss: {e}"));
                return Ok(None);
            }
        };
        if hits.is_empty() {
            return Ok(None);
        }
        let items: Vec<String> = hits.iter().map(|h| h.entry.object.clone()).collect();
        let reply = adapter
            .call(
                cache_model,
                Prompt::cache_answer(query, context, &items),
                Component::Cache,
                CallRole::CacheAnswer,
                trace,
            )
            .await;
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                trace.note(format!("cache model failed, treated as miss: {e}"));
                return Ok(None);
            }
        };
        match parse_cache_verdict(&reply.text, items.len()) {
            Some(CacheVerdict::Answer { mode, item, text }) => {
                let mut hit = hits[item].clone();
                hit.response_mode = mode;
                Ok(Some(SmartHit {
                    answer: text,
                    hit,
                    mode,
                    retrieved: items.len(),
                }))
            }
            Some(CacheVerdict::Irrelevant) => Ok(None),
            None => {
                trace.note("cache model reply unparsable, treated as miss");
                Ok(None)
            }
        }
    }
}

/// Descending similarity, then insertion order.
fn sort_hits(hits: &mut [(usize, (usize, f64))]) {
    hits.sort_by(|a, b| b.1 .1.total_cmp(&a.1 .1).then(a.0.cmp(&b.0)));
}

#[cfg(test)]
mod tests {
    use super::embed::HashEmbedder;
    use super::*;

    fn cache() -> SemanticCache {
        SemanticCache::new(Arc::new(HashEmbedder::default()))
    }

    fn meta() -> EntryMeta {
        EntryMeta::new(EntrySource::LlmInteraction)
    }

    #[tokio::test]
    async fn two_keys_resolve_to_one_entry() {
        let c = cache();
        let obj = "Use data structures like B-trees & Tries";
        let id = c
            .put_keys(
                obj,
                &[
                    (CachedType::Query, "How do I speed up my cache?".into()),
                    (CachedType::Response, obj.into()),
                ],
                meta(),
            )
            .await
            .unwrap();
        let by_query = c
            .get("How do I speed up my cache?", &[GetFilter::of_type(CachedType::Query).with_min(0.9)])
            .await
            .unwrap();
        let by_response = c.get(obj, &[GetFilter::of_type(CachedType::Response)]).await.unwrap();
        assert_eq!(by_query[0].entry.entry_id, id);
        assert_eq!(by_query[0].similarity, 1.0);
        assert_eq!(by_response[0].entry.entry_id, id);
        assert_eq!(c.len(), 1);
        assert_eq!(c.key_count(), 2);
    }

    #[tokio::test]
    async fn threshold_is_strict() {
        let c = cache();
        c.put_keys("x", &[(CachedType::Query, "alpha beta".into())], meta()).await.unwrap();
        assert!(c.get("alpha beta", &[GetFilter::above(1.0)]).await.unwrap().is_empty());
        assert_eq!(c.get("alpha beta", &[GetFilter::above(0.99)]).await.unwrap().len(), 1);
        assert!(c.get("gamma", &[GetFilter::above(0.0)]).await.unwrap().is_empty());
    }

    #[tokio::test]
    async fn one_hit_per_entry_with_best_key() {
        let c = cache();
        c.put_keys(
            "obj",
            &[(CachedType::Query, "red apple".into()), (CachedType::Response, "red apple pie".into())],
            meta(),
        )
        .await
        .unwrap();
        let hits = c.get("red apple", &[GetFilter::top(5)]).await.unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].matched_type, CachedType::Query);
    }

    #[tokio::test]
    async fn rejects_empty_object_and_filters() {
        let c = cache();
        assert!(matches!(
            c.put_keys("  ", &[(CachedType::Query, "q".into())], meta()).await,
            Err(Error::Precondition(_))
        ));
        assert!(matches!(c.get("q", &[]).await, Err(Error::Precondition(_))));
        assert!(matches!(c.get("q", &[GetFilter::default()]).await, Err(Error::Precondition(_))));
        assert!(c.is_empty());
    }

    #[test]
    fn exact_lookup_needs_type_and_text() {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let c = cache();
        rt.block_on(c.put_keys("answer", &[(CachedType::Query, "What next?".into())], meta()))
            .unwrap();
        assert!(c.exact(CachedType::Query, "What next?").is_some());
        assert!(c.exact(CachedType::Response, "What next?").is_none());
        assert!(c.exact(CachedType::Query, "what next?").is_none());
    }
}
