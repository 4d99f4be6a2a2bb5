//! Service types: named bundles of model, context and cache policy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::VerificationPolicy;
use crate::catalog::Catalog;
use crate::context::filter::{ContextFilter, FilterPlan};
use crate::error::{Error, Result};

/// A fully user-specified policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CustomPolicy {
    pub model: Option<String>,
    pub plan: FilterPlan,
    pub cache: CachePolicy,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceType {
    #[default]
    #[serde(alias = "opt-quality")]
    OptQuality,
    #[serde(alias = "opt-speed")]
    OptSpeed,
    #[serde(alias = "opt-cost")]
    OptCost,
    #[serde(alias = "model-selector")]
    ModelSelector,
    #[serde(alias = "smart-context")]
    SmartContext,
    #[serde(alias = "smart-cache")]
    SmartCache,
    Custom(CustomPolicy),
}

impl ServiceType {
    pub const NAMED: [ServiceType; 6] = [
        ServiceType::OptQuality,
        ServiceType::OptSpeed,
        ServiceType::OptCost,
        ServiceType::ModelSelector,
        ServiceType::SmartContext,
        ServiceType::SmartCache,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ServiceType::OptQuality => "opt_quality",
            ServiceType::OptSpeed => "opt_speed",
            ServiceType::OptCost => "opt_cost",
            ServiceType::ModelSelector => "model_selector",
            ServiceType::SmartContext => "smart_context",
            ServiceType::SmartCache => "smart_cache",
            ServiceType::Custom(_) => "custom",
        }
    }
}


impl fmt::Display for ServiceType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ServiceType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ServiceType::NAMED
            .iter()
            .find(|t| t.name() == norm)
            .cloned()
            .ok_or_else(|| Error::BadRequest(format!("unknown service type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CachePolicy {
    #[default]
    Off,
    /// Exact key-text lookup only (serves prefetched follow-ups).
    ExactOnly,
    /// Exact lookup, then a delegated semantic lookup.
    Smart,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelPolicy {
    Fixed(String),
    Verification(VerificationPolicy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedPolicy {
    pub model: ModelPolicy,
    pub plan: FilterPlan,
    pub cache: CachePolicy,
}

/// Which catalog models fill the roles the service types refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceBindings {
    pub flagship: String,
    /// Overrides the cheapest fast model for `opt_speed`.
    pub fast_model: Option<String>,
    /// Overrides the cheapest model for `opt_cost`.
    pub cheap_model: Option<String>,
    pub context_model: String,
    pub summary_model: String,
    pub cache_model: String,
    pub key_model: String,
    pub judge_model: String,
    pub verification: VerificationPolicy,
    /// Follow-up questions prefetched per answer; 0 disables prefetching.
    pub followups: usize,
    /// Model answering prefetched follow-ups; defaults to the answering model.
    pub followup_model: Option<String>,
    pub smart_cache_k: usize,
    pub summary_cap_tokens: u64,
    pub chunk_tokens: u64,
    pub keygen_questions: usize,
    pub system_instructions: String,
}

impl Default for ServiceBindings {
    fn default() -> Self {
        ServiceBindings {
            flagship: "gpt-4o".into(),
            fast_model: None,
            cheap_model: None,
            context_model: "gpt-4o-mini".into(),
            summary_model: "gpt-4o-mini".into(),
            cache_model: "phi-3-mini".into(),
            key_model: "phi-3-mini".into(),
            judge_model: "gpt-4".into(),
            verification: VerificationPolicy::new("gpt-3.5-turbo", "gpt-4", "claude-3-opus", 8),
            followups: 3,
            followup_model: None,
            smart_cache_k: 4,
            summary_cap_tokens: 256,
            chunk_tokens: 200,
            keygen_questions: 3,
            system_instructions: String::new(),
        }
    }
}

impl ServiceBindings {
    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        let named = [
            Some(&self.flagship),
            self.fast_model.as_ref(),
            self.cheap_model.as_ref(),
            Some(&self.context_model),
            Some(&self.summary_model),
            Some(&self.cache_model),
            Some(&self.key_model),
            Some(&self.judge_model),
            self.followup_model.as_ref(),
        ];
        for id in named.into_iter().flatten() {
            catalog.get(id)?;
        }
        self.verification.validate(catalog)?;
        if self.smart_cache_k == 0 {
            return Err(Error::Config("smart_cache_k must be positive".into()));
        }
        if self.chunk_tokens == 0 {
            return Err(Error::Config("chunk_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn fast(&self, catalog: &Catalog) -> Result<String> {
        match &self.fast_model {
            Some(m) => Ok(m.clone()),
            None => catalog
                .cheapest_fast()
                .map(|m| m.model_id.clone())
                .ok_or_else(|| Error::Catalog("no fast model in catalog".into())),
        }
    }

    pub fn cheapest(&self, catalog: &Catalog) -> Result<String> {
        match &self.cheap_model {
            Some(m) => Ok(m.clone()),
            None => catalog
                .cheapest()
                .map(|m| m.model_id.clone())
                .ok_or_else(|| Error::Catalog("empty catalog".into())),
        }
    }

    /// Maps a service type to its (model, context, cache) policy triple.
    pub fn resolve(&self, st: &ServiceType, catalog: &Catalog) -> Result<ResolvedPolicy> {
        let fixed = |m: String, plan: FilterPlan, cache: CachePolicy| ResolvedPolicy {
            model: ModelPolicy::Fixed(m),
            plan,
            cache,
        };
        Ok(match st {
            ServiceType::OptQuality => fixed(self.flagship.clone(), FilterPlan::full(), CachePolicy::Off),
            ServiceType::OptSpeed => fixed(self.fast(catalog)?, FilterPlan::last_k(1), CachePolicy::ExactOnly),
            ServiceType::OptCost => fixed(self.cheapest(catalog)?, FilterPlan::last_k(0), CachePolicy::Off),
            ServiceType::ModelSelector => ResolvedPolicy {
                model: ModelPolicy::Verification(self.verification.clone()),
                plan: FilterPlan::last_k(5),
                cache: CachePolicy::Off,
            },
            ServiceType::SmartContext => fixed(
                self.flagship.clone(),
                FilterPlan::chain(vec![
                    ContextFilter::LastK(5),
                    ContextFilter::SmartContext(Some(self.context_model.clone())),
                ]),
                CachePolicy::Off,
            ),
            ServiceType::SmartCache => fixed(self.flagship.clone(), FilterPlan::full(), CachePolicy::Smart),
            ServiceType::Custom(c) => {
                let model = c
                    .model
                    .clone()
                    .ok_or_else(|| Error::BadRequest("custom service type requires a model".into()))?;
                catalog.get(&model)?;
                fixed(model, c.plan.clone(), c.cache)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(st: ServiceType) -> Result<ResolvedPolicy> {
        ServiceBindings::default().resolve(&st, &Catalog::builtin())
    }

    #[test]
    fn named_types_resolve() {
        let q = resolve(ServiceType::OptQuality).unwrap();
        assert_eq!(q.model, ModelPolicy::Fixed("gpt-4o".into()));
        assert!(q.plan.is_full());
        assert_eq!(q.cache, CachePolicy::Off);

        let c = resolve(ServiceType::OptCost).unwrap();
        assert_eq!(c.model, ModelPolicy::Fixed("titan-text-lite".into()));
        assert_eq!(c.plan, FilterPlan::last_k(0));

        let s = resolve(ServiceType::OptSpeed).unwrap();
        assert_eq!(s.cache, CachePolicy::ExactOnly);
        assert_eq!(s.plan, FilterPlan::last_k(1));

        let m = resolve(ServiceType::ModelSelector).unwrap();
        assert!(matches!(m.model, ModelPolicy::Verification(_)));
        assert_eq!(m.plan, FilterPlan::last_k(5));

        let sc = resolve(ServiceType::SmartContext).unwrap();
        assert_eq!(sc.plan.to_string(), "lastk:5 > smart:gpt-4o-mini");

        let cache = resolve(ServiceType::SmartCache).unwrap();
        assert_eq!(cache.cache, CachePolicy::Smart);
        assert_eq!(cache.model, q.model);
    }

    #[test]
    fn custom_requires_model() {
        let err = resolve(ServiceType::Custom(CustomPolicy::default())).unwrap_err();
        assert!(matches!(err, Error::BadRequest(_)));
        let ok = resolve(ServiceType::Custom(CustomPolicy {
            model: Some("claude-3-haiku".into()),
            plan: FilterPlan::last_k(2),
            cache: CachePolicy::ExactOnly,
        }))
        .unwrap();
        assert_eq!(ok.model, ModelPolicy::Fixed("claude-3-haiku".into()));
    }

    #[test]
    fn names_and_serde() {
        assert_eq!("opt-cost".parse::<ServiceType>().unwrap(), ServiceType::OptCost);
        assert!("fastest".parse::<ServiceType>().is_err());
        assert_eq!(serde_json::to_string(&ServiceType::SmartCache).unwrap(), "\"smart_cache\"");
        let st: ServiceType = serde_json::from_str("\"model-selector\"").unwrap();
        assert_eq!(st, ServiceType::ModelSelector);
        let custom: ServiceType =
            serde_json::from_str(r#"{"custom":{"model":"gpt-4","plan":"lastk:3","cache":"exact_only"}}"#).unwrap();
        assert_eq!(custom.name(), "custom");
    }

    #[test]
    fn default_bindings_are_valid() {
        ServiceBindings::default().validate(&Catalog::builtin()).unwrap();
    }
}
