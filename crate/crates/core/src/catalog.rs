//! Pricing catalog loaded from a CSV table.
//!
//! Columns are matched by header name and rows may appear in any order:
//!
//! ```text
//! provider_id,model_id,input_price_per_1M_usd,output_price_per_1M_usd,latency_class,context_window
//! anthropic,claude-3-opus,15,75,slow,200000
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{cost_of, LatencyClass, ModelSpec, TokenUsage};
use crate::money::{TokenPrice, Usd};

/// The catalog shipped with the crate.
pub const DEFAULT_CATALOG_CSV: &str = include_str!("../catalog/default.csv");

#[derive(Debug, Deserialize)]
struct CatalogRow {
    provider_id: String,
    model_id: String,
    #[serde(rename = "input_price_per_1M_usd")]
    input_price: String,
    #[serde(rename = "output_price_per_1M_usd")]
    output_price: String,
    latency_class: String,
    context_window: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    models: BTreeMap<String, ModelSpec>,
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::from_csv(DEFAULT_CATALOG_CSV).expect("shipped catalog parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_csv(&text)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut catalog = Catalog::default();
        for (line, row) in reader.deserialize::<CatalogRow>().enumerate() {
            let row = row.map_err(|e| Error::Catalog(format!("row {}: {e}", line + 1)))?;
            let price = |s: &str| {
                TokenPrice::per_million(s).map_err(|e| Error::Catalog(format!("{}: {e}", row.model_id)))
            };
            let spec = ModelSpec {
                input_price: price(&row.input_price)?,
                output_price: price(&row.output_price)?,
                latency_class: row
                    .latency_class
                    .parse()
                    .map_err(|e| Error::Catalog(format!("{}: {e}", row.model_id)))?,
                context_window: row.context_window,
                provider_id: row.provider_id,
                model_id: row.model_id,
            };
            catalog.insert(spec)?;
        }
        Ok(catalog)
    }

    pub fn insert(&mut self, spec: ModelSpec) -> Result<()> {
        if spec.context_window == 0 {
            return Err(Error::Catalog(format!("{}: context_window must be > 0", spec.model_id)));
        }
        if self.models.contains_key(&spec.model_id) {
            return Err(Error::Catalog(format!("duplicate model {}", spec.model_id)));
        }
        self.models.insert(spec.model_id.clone(), spec);
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelSpec> {
        self.models
            .get(model_id)
            .ok_or_else(|| Error::CatalogMiss(model_id.to_string()))
    }

    pub fn contains(&self, model_id: &str) -> bool {
        self.models.contains_key(model_id)
    }

    pub fn cost_of(&self, usage: TokenUsage, model_id: &str) -> Result<Usd> {
        Ok(cost_of(usage, self.get(model_id)?))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelSpec> {
        self.models.values()
    }

    pub fn providers(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.models.values().map(|m| m.provider_id.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Lowest combined per-token price; ties broken by model id.
    pub fn cheapest(&self) -> Option<&ModelSpec> {
        self.models.values().min_by_key(|m| (m.price_rank(), m.model_id.clone()))
    }

    /// Cheapest model of the fast latency class.
    pub fn cheapest_fast(&self) -> Option<&ModelSpec> {
        self.models
            .values()
            .filter(|m| m.latency_class == LatencyClass::Fast)
            .min_by_key(|m| (m.price_rank(), m.model_id.clone()))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "provider_id,model_id,input_price_per_1M_usd,output_price_per_1M_usd,latency_class,context_window\n",
        );
        for m in self.models.values() {
            let class = match m.latency_class {
                LatencyClass::Fast => "fast",
                LatencyClass::Slow => "slow",
            };
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                m.provider_id, m.model_id, m.input_price, m.output_price, class, m.context_window
            ));
        }
        out
    }
}
