//! Gateway configuration from the environment and an optional TOML file.
//!
//! | variable | meaning |
//! |---|---|
//! | `PROVIDER_<ID>_API_KEY` | credentials; a provider with a key gets an HTTP backend |
//! | `PROVIDER_<ID>_BASE_URL` | endpoint override |
//! | `COSTGATE_CATALOG` | pricing catalog CSV (defaults to the built-in table) |
//! | `COSTGATE_DATA` | directory for the file store (in-memory when unset) |
//! | `COSTGATE_QUEUE_BOUND` | per-user queue bound |
//! | `COSTGATE_TOKEN` | static bearer token for the HTTP API |
//!
//! The file holds the service bindings under `[bindings]`, an optional mock
//! provider table under `[mock]` or `mock_file`, and per-provider wire
//! formats under `[[providers]]`.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::adapter::http::{env_key, HttpProvider, WireFormat};
use crate::adapter::mock::{MockConfig, MockProvider};
use crate::adapter::ModelAdapter;
use crate::cache::embed::HashEmbedder;
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::service::ServiceBindings;
use crate::store::{FileStore, MemoryStore, Store};

use super::Coordinator;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub id: String,
    pub format: WireFormat,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub catalog: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub queue_bound: usize,
    pub token: Option<String>,
    pub request_timeout_secs: u64,
    pub bindings: ServiceBindings,
    pub providers: Vec<ProviderConfig>,
    /// Serve every model without an HTTP backend from the mock provider.
    pub mock: Option<MockConfig>,
    pub mock_file: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            catalog: None,
            data_dir: None,
            queue_bound: 64,
            token: None,
            request_timeout_secs: 120,
            bindings: ServiceBindings::default(),
            providers: Vec::new(),
            mock: None,
            mock_file: None,
        }
    }
}

impl GatewayConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// The file (if any) with environment variables layered on top.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(c) = var("COSTGATE_CATALOG") {
            self.catalog = Some(c.into());
        }
        if let Some(d) = var("COSTGATE_DATA") {
            self.data_dir = Some(d.into());
        }
        if let Some(b) = var("COSTGATE_QUEUE_BOUND") {
            self.queue_bound = b
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("COSTGATE_QUEUE_BOUND={b:?} is not a count")))?;
        }
        if let Some(t) = var("COSTGATE_TOKEN").filter(|t| !t.is_empty()) {
            self.token = Some(t);
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(p) => Catalog::load(p),
            None => Ok(Catalog::builtin()),
        }
    }

    fn mock_config(&self) -> Result<Option<MockConfig>> {
        match (&self.mock, &self.mock_file) {
            (_, Some(path)) => Ok(Some(MockConfig::load(path)?)),
            (Some(m), None) => Ok(Some(m.clone())),
            (None, None) => Ok(None),
        }
    }

    fn wire_format(&self, provider_id: &str) -> (WireFormat, Option<String>, Option<usize>) {
        match self.providers.iter().find(|p| p.id == provider_id) {
            Some(p) => (p.format, p.base_url.clone(), p.max_in_flight),
            None if provider_id == "anthropic" => (WireFormat::Anthropic, None, None),
            None => (WireFormat::OpenAi, None, None),
        }
    }

    /// Builds the adapter: HTTP backends for providers with credentials,
    /// the mock for everything else when configured.
    pub fn build_adapter(&self, catalog: Arc<Catalog>) -> Result<ModelAdapter> {
        let timeout = Duration::from_secs(self.request_timeout_secs.max(1));
        let mut adapter = ModelAdapter::new(catalog.clone());
        let mut live = 0;
        for provider in catalog.providers() {
            if std::env::var(env_key(&provider, "API_KEY")).is_err() {
                continue;
            }
            let (format, base, limit) = self.wire_format(&provider);
            let http = Arc::new(HttpProvider::from_env(&provider, format, base.as_deref(), timeout)?);
            adapter = match limit {
                Some(n) => adapter.with_provider_limited(http, n),
                None => adapter.with_provider(http),
            };
            live += 1;
        }
        match self.mock_config()? {
            Some(mock) => adapter = adapter.with_fallback(Arc::new(MockProvider::new(mock))),
            None if live == 0 => {
                tracing::warn!("no provider credentials found; serving every model from the mock provider");
                adapter = adapter.with_fallback(Arc::new(MockProvider::new(MockConfig::default())));
            }
            None => {}
        }
        adapter.with_delegation(self.bindings.verification.clone())
    }

    pub fn build(&self) -> Result<Arc<Coordinator>> {
        let catalog = Arc::new(self.load_catalog()?);
        let adapter = Arc::new(self.build_adapter(catalog)?);
        let store: Arc<dyn Store> = match &self.data_dir {
            Some(dir) => Arc::new(FileStore::open(dir)?),
            None => Arc::new(MemoryStore::new()),
        };
        Coordinator::new(
            adapter,
            store,
            Arc::new(HashEmbedder::default()),
            self.bindings.clone(),
            self.queue_bound,
        )
    }
}
