#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{TimeZone, Utc};
use costgate::adapter::mock::{MockConfig, MockProvider};
use costgate::adapter::ModelAdapter;
use costgate::cache::embed::HashEmbedder;
use costgate::catalog::Catalog;
use costgate::gateway::Coordinator;
use costgate::service::ServiceBindings;
use costgate::store::{MemoryStore, Store};
use costgate::{MessageRecord, ServiceType, TokenUsage, Usd};

pub fn record(user: &str, session: &str, i: usize, query: &str, response: &str) -> MessageRecord {
    MessageRecord {
        request_id: format!("{user}-{session}-{i}"),
        user_id: user.into(),
        session_id: session.into(),
        query: query.into(),
        response: response.into(),
        model_id: "gpt-4o".into(),
        usage: TokenUsage::new(10, 10),
        cost_usd: Usd::ZERO,
        timestamp: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
        duration_ms: 1,
        service_type: ServiceType::OptQuality,
        metadata: BTreeMap::new(),
        supersedes: None,
        synthetic: false,
    }
}

pub fn mock_adapter(cfg: MockConfig) -> (Arc<ModelAdapter>, Arc<MockProvider>) {
    let mock = Arc::new(MockProvider::new(cfg));
    let adapter = ModelAdapter::new(Arc::new(Catalog::builtin())).with_fallback(mock.clone());
    (Arc::new(adapter), mock)
}

pub struct TestGateway {
    pub coordinator: Arc<Coordinator>,
    pub mock: Arc<MockProvider>,
    pub store: Arc<MemoryStore>,
}

pub fn gateway_with(cfg: MockConfig, bindings: ServiceBindings, queue_bound: usize) -> TestGateway {
    let (adapter, mock) = mock_adapter(cfg);
    let store = Arc::new(MemoryStore::new());
    let dyn_store: Arc<dyn Store> = store.clone();
    let coordinator = Coordinator::new(adapter, dyn_store, Arc::new(HashEmbedder::default()), bindings, queue_bound)
        .expect("gateway builds");
    TestGateway {
        coordinator,
        mock,
        store,
    }
}

pub fn gateway(cfg: MockConfig) -> TestGateway {
    gateway_with(cfg, ServiceBindings::default(), 64)
}
