mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use async_trait::async_trait;
use common::mock_adapter;
use costgate::adapter::mock::{MockConfig, MockRule};
use costgate::adapter::prompt::ResponseMode;
use costgate::cache::embed::{Embedder, HashEmbedder};
use costgate::cache::{CachedType, EntryMeta, EntrySource, GetFilter, KeyGenConfig, SemanticCache};
use costgate::store::{FileStore, Store};
use costgate::trace::{CallRole, Trace};
use costgate::{Error, Result};
use proptest::prelude::*;

fn delegating(cfg: MockConfig) -> SemanticCache {
    let (adapter, _) = mock_adapter(cfg);
    SemanticCache::new(Arc::new(HashEmbedder::default())).with_delegate(
        adapter,
        KeyGenConfig {
            key_model: "phi-3-mini".into(),
            chunk_tokens: 200,
            questions: 2,
        },
    )
}

fn meta() -> EntryMeta {
    EntryMeta::new(EntrySource::LlmInteraction)
}

#[tokio::test]
async fn response_key_beats_query_key_on_shared_words() {
    let cache = SemanticCache::new(Arc::new(HashEmbedder::default()));
    let object = "Use data structures like B-trees & Tries";
    let id = cache
        .put_keys(
            object,
            &[
                (CachedType::Query, "How do I speed up my cache?".into()),
                (CachedType::Response, object.into()),
            ],
            meta(),
        )
        .await
        .unwrap();
    let probe = "Give me examples of popular data structures?";
    let per_type = |t| GetFilter::of_type(t);
    let q = cache.get(probe, &[per_type(CachedType::Query)]).await.unwrap();
    let r = cache.get(probe, &[per_type(CachedType::Response)]).await.unwrap();
    assert!(r[0].similarity > q[0].similarity);
    let both = cache.get(probe, &[GetFilter::top(5)]).await.unwrap();
    assert_eq!(both.len(), 1);
    assert_eq!(both[0].entry.entry_id, id);
    assert_eq!(both[0].matched_type, CachedType::Response);
}

#[tokio::test]
async fn delegated_put_emits_every_key_type() {
    let cache = delegating(MockConfig::default());
    let mut trace = Trace::new();
    let doc = "Caches keep hot data close. Eviction removes cold items. Sizing matters a lot.";
    let out = cache.delegated_put(doc, "phi-3-mini", 200, 2, &mut trace).await.unwrap();
    assert_eq!((out.chunks, out.degraded, out.entry_ids.len()), (1, 0, 3));
    assert_eq!(trace.count_role(CallRole::KeyGen), 1);

    let entries = cache.entries();
    let types: Vec<Vec<CachedType>> = entries.iter().map(|e| e.keys.iter().map(|k| k.cached_type).collect()).collect();
    assert_eq!(
        types[0],
        [
            CachedType::Chunk,
            CachedType::HypotheticalQuestion,
            CachedType::HypotheticalQuestion,
            CachedType::Keywords
        ]
    );
    assert_eq!(types[1], [CachedType::Summary]);
    assert_eq!(types[2], [CachedType::FactList]);
    let groups: BTreeSet<_> = entries.iter().map(|e| e.metadata.group_id.clone()).collect();
    assert_eq!(groups.len(), 1);
    assert!(entries.iter().all(|e| e.metadata.source == EntrySource::ExternalDocument));
    assert_eq!(entries[0].keys[3].text.split(", ").count(), 3);
}

#[tokio::test]
async fn key_model_failure_degrades_to_chunk_keys() {
    let cache = delegating(MockConfig {
        failing_models: vec!["phi-3-mini".into()],
        ..MockConfig::default()
    });
    let mut trace = Trace::new();
    let doc = "First paragraph here.\n\nSecond paragraph there.";
    let out = cache.delegated_put(doc, "phi-3-mini", 5, 2, &mut trace).await.unwrap();
    assert_eq!((out.chunks, out.degraded), (2, 2));
    let entries = cache.entries();
    assert_eq!(entries.len(), 2);
    assert!(entries.iter().all(|e| e.metadata.degraded && e.keys.len() == 1 && e.keys[0].cached_type == CachedType::Chunk));
    assert!(!trace.notes.is_empty());

    let mut trace = Trace::new();
    assert!(matches!(cache.delegated_put("  ", "phi-3-mini", 5, 2, &mut trace).await, Err(Error::Precondition(_))));
}

struct BrokenEmbedder;

#[async_trait]
impl Embedder for BrokenEmbedder {
    fn dim(&self) -> usize {
        8
    }
    async fn embed(&self, _: &[String]) -> Result<Vec<Vec<f32>>> {
        Err(Error::Embedder("offline".into()))
    }
}

#[tokio::test]
async fn failed_put_leaves_the_index_unchanged() {
    let cache = SemanticCache::new(Arc::new(BrokenEmbedder));
    let err = cache
        .put_keys("obj", &[(CachedType::Query, "k".into()), (CachedType::Response, "v".into())], meta())
        .await;
    assert!(matches!(err, Err(Error::Embedder(_))));
    assert_eq!((cache.len(), cache.key_count()), (0, 0));
    assert!(cache.exact(CachedType::Query, "k").is_none());
}

#[tokio::test]
async fn smart_get_answers_from_cache_model_only() {
    let cache = delegating(MockConfig::default());
    let mut trace = Trace::new();
    assert!(cache.smart_get("anything", &[], "phi-3-mini", 4, &mut trace).await.unwrap().is_none());
    assert!(trace.calls.is_empty());

    let doc = "The Falcon rocket lands on a drone ship. Landing legs deploy before touchdown.";
    cache.delegated_put(doc, "phi-3-mini", 200, 2, &mut trace).await.unwrap();
    let mut trace = Trace::new();
    let hit = cache
        .smart_get("Falcon rocket drone ship landing", &[], "phi-3-mini", 4, &mut trace)
        .await
        .unwrap()
        .expect("relevant hit");
    assert_eq!(hit.mode, ResponseMode::Generated);
    assert_eq!(hit.retrieved, 3);
    assert_eq!(trace.calls.len(), 1);
    assert_eq!(trace.calls[0].role, CallRole::CacheAnswer);
    assert!(!trace.has_chat_call());

    let never = delegating(MockConfig {
        default_relevant: false,
        ..MockConfig::default()
    });
    never.delegated_put(doc, "phi-3-mini", 200, 2, &mut Trace::new()).await.unwrap();
    for q in ["Falcon rocket", "landing legs", doc] {
        assert!(never.smart_get(q, &[], "phi-3-mini", 4, &mut Trace::new()).await.unwrap().is_none());
    }
}

#[tokio::test]
async fn smart_get_model_failure_is_a_noted_miss() {
    let cfg = MockConfig::default().rule(MockRule::exact("boom").fail());
    let cache = delegating(cfg);
    cache
        .put_keys("payload", &[(CachedType::Query, "boom".into())], meta())
        .await
        .unwrap();
    let mut trace = Trace::new();
    assert!(cache.smart_get("boom", &[], "phi-3-mini", 4, &mut trace).await.unwrap().is_none());
    assert!(trace.notes.iter().any(|n| n.contains("miss")));
}

#[tokio::test]
async fn entries_survive_a_reopen() {
    let dir = tempfile::tempdir().unwrap();
    {
        let store: Arc<dyn Store> = Arc::new(FileStore::open(dir.path()).unwrap());
        let cache = SemanticCache::open(Arc::new(HashEmbedder::default()), store).unwrap();
        cache
            .put_keys("persisted", &[(CachedType::Query, "will it stay?".into())], meta())
            .await
            .unwrap();
    }
    let store: Arc<dyn Store> = Arc::new(FileStore::open(dir.path()).unwrap());
    let cache = SemanticCache::open(Arc::new(HashEmbedder::default()), store).unwrap();
    assert_eq!(cache.exact(CachedType::Query, "will it stay?").unwrap().entry.object, "persisted");
    let hits = cache.get("will it stay?", &[GetFilter::above(0.99)]).await.unwrap();
    assert_eq!(hits[0].similarity, 1.0);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn readers_never_see_partial_entries() {
    let cache = Arc::new(SemanticCache::new(Arc::new(HashEmbedder::default())));
    let writers: Vec<_> = (0..8)
        .map(|w| {
            let cache = cache.clone();
            tokio::spawn(async move {
                for i in 0..20 {
                    let keys: Vec<(CachedType, String)> = (0..3)
                        .map(|j| (CachedType::HypotheticalQuestion, format!("w{w} i{i} key{j} shared")))
                        .collect();
                    cache.put_keys(&format!("obj {w} {i}"), &keys, meta()).await.unwrap();
                }
            })
        })
        .collect();
    let reader = {
        let cache = cache.clone();
        tokio::spawn(async move {
            for _ in 0..50 {
                for hit in cache.get("shared", &[GetFilter::top(1000)]).await.unwrap() {
                    assert_eq!(hit.entry.keys.len(), 3);
                }
                tokio::task::yield_now().await;
            }
        })
    };
    for w in writers {
        w.await.unwrap();
    }
    reader.await.unwrap();
    assert_eq!((cache.len(), cache.key_count()), (160, 480));
}

proptest! {
    #[test]
    fn put_then_get_returns_the_entry_first(
        keys in proptest::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,6}", 1..8),
        pick in any::<prop::sample::Index>(),
    ) {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        rt.block_on(async {
            let cache = SemanticCache::new(Arc::new(HashEmbedder::default()));
            let mut ids = Vec::new();
            for (i, k) in keys.iter().enumerate() {
                ids.push(cache.put_keys(&format!("object {i}"), &[(CachedType::Query, k.clone())], meta()).await.unwrap());
            }
            let i = pick.index(keys.len());
            let hits = cache.get(&keys[i], &[GetFilter::of_type(CachedType::Query).with_min(0.99)]).await.unwrap();
            prop_assert!(!hits.is_empty());
            prop_assert_eq!(hits[0].similarity, 1.0);
            prop_assert_eq!(&hits[0].matched_key, &keys[i]);
            for h in &hits {
                prop_assert!(h.similarity > 0.99);
            }
            Ok(())
        })?;
    }
}
