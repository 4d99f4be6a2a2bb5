//! Offline replay of conversation fixtures under several strategies.
//!
//! Each (strategy, repetition) pair gets a fresh in-memory gateway. Within a
//! run, conversations are replayed concurrently and the queries of one
//! conversation strictly in order, since each depends on the history before
//! it. Scores come from the judge comparing every strategy's reply to the
//! baseline strategy's reply, each paired with the reply before it.

pub mod curve;
pub mod fixture;
pub mod report;
pub mod routing;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use futures::future::try_join_all;

use crate::adapter::mock::{MockConfig, MockProvider};
use crate::adapter::prompt::Turns;
use crate::adapter::ModelAdapter;
use crate::cache::embed::HashEmbedder;
use crate::catalog::Catalog;
use crate::context::FilterPlan;
use crate::error::{Error, Result};
use crate::gateway::{Coordinator, ProxyRequest, ProxyResponse};
use crate::money::Usd;
use crate::service::{CachePolicy, CustomPolicy, ServiceBindings, ServiceType};
use crate::store::MemoryStore;
use crate::trace::Trace;

pub use fixture::{load_fixtures, mock_config, uniform_conversation, ConversationFixture};
pub use report::{QueryReport, StrategyReport};

/// A named service type, or a bare filter plan answered by the flagship.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Service(ServiceType),
    Plan(FilterPlan),
}

impl Strategy {
    pub fn name(&self) -> String {
        self.to_string()
    }

    fn service_type(&self, bindings: &ServiceBindings) -> ServiceType {
        match self {
            Strategy::Service(t) => t.clone(),
            Strategy::Plan(plan) => ServiceType::Custom(CustomPolicy {
                model: Some(bindings.flagship.clone()),
                plan: plan.clone(),
                cache: CachePolicy::Off,
            }),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Service(t) => f.write_str(t.name()),
            Strategy::Plan(p) => write!(f, "plan:{p}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `opt_cost`, `smart_context`, ... or `plan:lastk:5`, `plan:full`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.strip_prefix("plan:") {
            Some(plan) => Ok(Strategy::Plan(plan.parse().map_err(Error::Filter)?)),
            None => Ok(Strategy::Service(s.parse()?)),
        }
    }
}

/// Comma-separated strategies; plans never contain commas.
pub fn parse_strategies(list: &str) -> Result<Vec<Strategy>> {
    let out: Vec<Strategy> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::BadRequest("no strategies given".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub repetitions: usize,
    /// Reference strategy for judging; defaults to `plan:lastk:5` when it
    /// is among the strategies, otherwise the first one.
    pub baseline: Option<Strategy>,
    pub judge: bool,
    pub bindings: ServiceBindings,
    /// Mock settings the fixture rules are layered onto.
    pub mock: MockConfig,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        let bindings = ServiceBindings {
            followups: 0,
            ..ServiceBindings::default()
        };
        ReplayOptions {
            repetitions: 1,
            baseline: None,
            judge: true,
            bindings,
            mock: MockConfig::default(),
        }
    }
}

/// One served query.
#[derive(Debug, Clone, PartialEq)]
struct Served {
    answer: String,
    model: String,
    context_messages: usize,
    trace: Trace,
}

impl Served {
    fn from_response(r: ProxyResponse) -> Self {
        Served {
            answer: r.answer,
            model: r.metadata.model_used,
            context_messages: r.metadata.context_messages_used,
            trace: Trace {
                calls: r.metadata.component_trace,
                notes: r.metadata.notes,
            },
        }
    }
}

/// Transcript of one (strategy, repetition): `[conversation][query]`.
type Transcript = Vec<Vec<Served>>;

pub struct Replayer {
    adapter: Arc<ModelAdapter>,
    bindings: ServiceBindings,
    fixtures: Vec<ConversationFixture>,
}

impl Replayer {
    /// Fails with a fixture error when the fixtures are inconsistent, before
    /// anything is replayed.
    pub fn new(catalog: Arc<Catalog>, fixtures: Vec<ConversationFixture>, opts: &ReplayOptions) -> Result<Self> {
        if fixtures.is_empty() {
            return Err(Error::Fixture("no conversations to replay".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for f in &fixtures {
            if !ids.insert(&f.id) {
                return Err(Error::Fixture(format!("duplicate conversation id {}", f.id)));
            }
        }
        let mock = mock_config(&fixtures, opts.mock.clone())?;
        let adapter = ModelAdapter::new(catalog)
            .with_fallback(Arc::new(MockProvider::new(mock)))
            .with_delegation(opts.bindings.verification.clone())?;
        opts.bindings.validate(adapter.catalog())?;
        Ok(Replayer {
            adapter: Arc::new(adapter),
            bindings: opts.bindings.clone(),
            fixtures,
        })
    }

    pub fn adapter(&self) -> &ModelAdapter {
        &self.adapter
    }

    async fn run_once(&self, strategy: &Strategy) -> Result<Transcript> {
        let gateway = Coordinator::new(
            self.adapter.clone(),
            Arc::new(MemoryStore::new()),
            Arc::new(HashEmbedder::default()),
            self.bindings.clone(),
            usize::MAX,
        )?;
        let service_type = strategy.service_type(&self.bindings);
        let runs = self.fixtures.iter().map(|f| {
            let gateway = gateway.clone();
            let service_type = service_type.clone();
            async move {
                let mut served = Vec::with_capacity(f.queries.len());
                for q in &f.queries {
                    let req = ProxyRequest::new(&f.id, "replay", q, service_type.clone());
                    served.push(Served::from_response(gateway.handle(req).await?));
                }
                Ok::<_, Error>(served)
            }
        });
        try_join_all(runs).await
    }

    /// Replays every fixture under every strategy `opts.repetitions` times
    /// and averages tokens, cost, duration and judge scores over repetitions.
    pub async fn replay(&self, strategies: &[Strategy], opts: &ReplayOptions) -> Result<Vec<StrategyReport>> {
        if strategies.is_empty() {
            return Err(Error::BadRequest("no strategies given".into()));
        }
        if opts.repetitions == 0 {
            return Err(Error::BadRequest("repetitions must be at least 1".into()));
        }
        let baseline = match &opts.baseline {
            Some(b) => b.clone(),
            None => {
                let lastk5 = Strategy::Plan(FilterPlan::last_k(5));
                if strategies.contains(&lastk5) {
                    lastk5
                } else {
                    strategies[0].clone()
                }
            }
        };
        let mut runs: Vec<Vec<Transcript>> = Vec::with_capacity(strategies.len());
        for s in strategies {
            let mut reps = Vec::with_capacity(opts.repetitions);
            for _ in 0..opts.repetitions {
                reps.push(self.run_once(s).await?);
            }
            runs.push(reps);
        }
        let reference = match strategies.iter().position(|s| *s == baseline) {
            Some(i) => runs[i][0].clone(),
            None => self.run_once(&baseline).await?,
        };

        let mut reports = Vec::with_capacity(strategies.len());
        for (strategy, reps) in strategies.iter().zip(&runs) {
            let mut per_query = Vec::new();
            for (c, fixture) in self.fixtures.iter().enumerate() {
                for i in 0..fixture.queries.len() {
                    let mut scores = Vec::new();
                    if opts.judge {
                        for rep in reps {
                            scores.push(self.judge(&fixture.queries[i], &reference[c], &rep[c], i).await?);
                        }
                    }
                    per_query.push(QueryReport::average(
                        &strategy.name(),
                        &fixture.id,
                        i,
                        reps.iter().map(|r| &r[c][i].trace),
                        &reps[0][c][i].model,
                        reps[0][c][i].context_messages,
                        &scores,
                    ));
                }
            }
            reports.push(StrategyReport::from_queries(&strategy.name(), per_query));
        }
        report::normalize(&mut reports);
        Ok(reports)
    }

    async fn judge(&self, query: &str, reference: &[Served], candidate: &[Served], i: usize) -> Result<f64> {
        let window = |t: &[Served]| Turns {
            current: t[i].answer.clone(),
            previous: i.checked_sub(1).map(|p| t[p].answer.clone()),
        };
        let mut trace = Trace::new();
        let judgement = self
            .adapter
            .judge(&self.bindings.judge_model, query, &window(reference), &window(candidate), &mut trace)
            .await?;
        Ok(f64::from(judgement.score.value()))
    }
}

/// Convenience wrapper: builds a [`Replayer`] on the built-in catalog and runs it.
pub async fn replay(
    fixtures: Vec<ConversationFixture>,
    strategies: &[Strategy],
    opts: &ReplayOptions,
) -> Result<Vec<StrategyReport>> {
    Replayer::new(Arc::new(Catalog::builtin()), fixtures, opts)?
        .replay(strategies, opts)
        .await
}

/// Total cost of the cheapest report.
pub fn min_cost(reports: &[StrategyReport]) -> Option<Usd> {
    reports.iter().map(|r| r.total_usd).min()
}
