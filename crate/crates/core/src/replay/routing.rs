//! Verification routing over a fixture set, compared with fixed and random
//! routing baselines.
//!
//! Every query part is routed on its own without conversation context.
//! Random baselines send each query to the expensive model with probability
//! `p` from a seeded generator and never consult the verifier.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fixture::{mock_config, ConversationFixture};
use crate::adapter::mock::{MockConfig, MockProvider};
use crate::adapter::selection::VerificationPolicy;
use crate::adapter::{CompletionRequest, ModelAdapter};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::money::Usd;
use crate::trace::{CallRole, Component, Trace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicyFile {
    #[serde(flatten)]
    pub policy: VerificationPolicy,
    #[serde(default = "default_random_p")]
    pub random_p: Vec<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_random_p() -> Vec<f64> {
    vec![0.25, 0.25, 0.25]
}

fn default_seed() -> u64 {
    7
}

impl RoutingPolicyFile {
    /// TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingRun {
    pub name: String,
    pub cost: Usd,
    /// Sum of synthetic call latencies.
    pub time_ms: u64,
    /// Queries answered by the expensive model.
    pub expensive_answers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub queries: usize,
    pub escalated: usize,
    pub escalation_fraction: f64,
    /// Positions (across all fixtures, in order) of escalated queries.
    pub escalated_indices: Vec<usize>,
    pub verified: RoutingRun,
    pub always_cheap: RoutingRun,
    pub always_expensive: RoutingRun,
    pub random: Vec<(f64, RoutingRun)>,
    /// Verifier calls only, for the cost bound.
    pub verifier_cost: Usd,
}

impl RoutingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("run,cost_usd,time_ms,expensive_answers\n");
        let rows = [&self.verified, &self.always_cheap, &self.always_expensive]
            .into_iter()
            .chain(self.random.iter().map(|(_, r)| r));
        for r in rows {
            s.push_str(&format!("{},{},{},{}\n", r.name, r.cost, r.time_ms, r.expensive_answers));
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "escalated {}/{} ({:.2}%)\n",
            self.escalated,
            self.queries,
            self.escalation_fraction * 100.0
        );
        for line in self.to_csv().lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            s.push_str(&format!("{:<22} usd {:>16}  time {:>9} ms  expensive {:>5}\n", f[0], f[1], f[2], f[3]));
        }
        s
    }
}

pub async fn routing_report(
    catalog: Arc<Catalog>,
    policy: &RoutingPolicyFile,
    fixtures: &[ConversationFixture],
    base: MockConfig,
) -> Result<RoutingReport> {
    policy.policy.validate(&catalog)?;
    if fixtures.iter().any(|f| f.verifier_scores.is_none()) {
        return Err(Error::Fixture("routing needs verifier scores for every conversation".into()));
    }
    if let Some(p) = policy.random_p.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::BadRequest(format!("random routing probability {p} outside [0, 1]")));
    }
    let adapter = ModelAdapter::new(catalog).with_fallback(Arc::new(MockProvider::new(mock_config(fixtures, base)?)));
    let queries: Vec<&String> = fixtures.iter().flat_map(|f| f.queries.iter()).collect();
    if queries.is_empty() {
        return Err(Error::Fixture("no queries".into()));
    }

    let mut verified = RoutingRun::named("verified");
    let mut cheap = RoutingRun::named(&format!("always:{}", policy.policy.m1));
    let mut expensive = RoutingRun::named(&format!("always:{}", policy.policy.m2));
    let mut cheap_each = Vec::with_capacity(queries.len());
    let mut expensive_each = Vec::with_capacity(queries.len());
    let mut escalated_indices = Vec::new();
    let mut verifier_cost = Usd::ZERO;

    for (i, q) in queries.iter().enumerate() {
        let req = CompletionRequest::new(q.as_str());
        let mut trace = Trace::new();
        let (_, sel) = adapter.select_with_verification(&policy.policy, &req, &mut trace).await?;
        verified.add(sel.cost(), sel.duration_ms(), sel.escalated);
        verifier_cost += sel
            .calls
            .iter()
            .filter(|c| c.role == CallRole::Verifier)
            .map(|c| c.cost_usd)
            .sum();
        if sel.escalated {
            escalated_indices.push(i);
        }
        for (model, run, each, is_exp) in [
            (&policy.policy.m1, &mut cheap, &mut cheap_each, false),
            (&policy.policy.m2, &mut expensive, &mut expensive_each, true),
        ] {
            let mut t = Trace::new();
            adapter
                .call(model, req.prompt(), Component::ModelAdapter, CallRole::Chat, &mut t)
                .await?;
            run.add(t.cost(), t.duration_ms(), is_exp);
            each.push((t.cost(), t.duration_ms()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let random = policy
        .random_p
        .iter()
        .enumerate()
        .map(|(run_no, &p)| {
            let mut run = RoutingRun::named(&format!("random:p={p}#{}", run_no + 1));
            for i in 0..queries.len() {
                let exp = rng.gen_bool(p);
                let (cost, ms) = if exp { expensive_each[i] } else { cheap_each[i] };
                run.add(cost, ms, exp);
            }
            (p, run)
        })
        .collect();

    Ok(RoutingReport {
        queries: queries.len(),
        escalated: escalated_indices.len(),
        escalation_fraction: escalated_indices.len() as f64 / queries.len() as f64,
        escalated_indices,
        verified,
        always_cheap: cheap,
        always_expensive: expensive,
        random,
        verifier_cost,
    })
}

impl RoutingRun {
    fn named(name: &str) -> Self {
        RoutingRun {
            name: name.into(),
            cost: Usd::ZERO,
            time_ms: 0,
            expensive_answers: 0,
        }
    }

    fn add(&mut self, cost: Usd, ms: u64, expensive: bool) {
        self.cost += cost;
        self.time_ms += ms;
        self.expensive_answers += usize::from(expensive);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(scores: &[u8]) -> ConversationFixture {
        let mut f = ConversationFixture::new(
            "r",
            (0..scores.len()).map(|i| format!("routing question {i}")).collect(),
        );
        f.verifier_scores = Some(scores.to_vec());
        f
    }

    fn policy(t: u8, random_p: Vec<f64>) -> RoutingPolicyFile {
        RoutingPolicyFile {
            policy: VerificationPolicy::new("gpt-3.5-turbo", "gpt-4", "claude-3-opus", t),
            random_p,
            seed: 1,
        }
    }

    async fn run(t: u8, scores: &[u8], p: Vec<f64>) -> RoutingReport {
        routing_report(Arc::new(Catalog::builtin()), &policy(t, p), &[fixture(scores)], MockConfig::default())
            .await
            .unwrap()
    }

    #[tokio::test]
    async fn escalates_below_threshold_only() {
        let r = run(8, &[7, 8, 9, 0, 10], vec![0.0, 1.0]).await;
        assert_eq!(r.escalated_indices, [0, 3]);
        assert_eq!(r.escalation_fraction, 0.4);
        assert!(r.always_cheap.cost <= r.verified.cost);
        assert!(r.verified.cost <= r.always_expensive.cost + r.always_cheap.cost + r.verifier_cost);
        assert_eq!(r.random[0].1.cost, r.always_cheap.cost);
        assert_eq!(r.random[1].1.cost, r.always_expensive.cost);
        assert_eq!(r.random[1].1.expensive_answers, 5);
    }

    #[tokio::test]
    async fn rejects_missing_scores_and_bad_probability() {
        let cat = Arc::new(Catalog::builtin());
        let f = ConversationFixture::new("x", vec!["q".into()]);
        let err = routing_report(cat.clone(), &policy(8, vec![]), &[f], MockConfig::default()).await;
        assert!(matches!(err, Err(Error::Fixture(_))));
        let err = routing_report(cat, &policy(8, vec![1.5]), &[fixture(&[1])], MockConfig::default()).await;
        assert!(matches!(err, Err(Error::BadRequest(_))));
    }

    #[test]
    fn policy_file_formats() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("p.toml");
        std::fs::write(
            &toml_path,
            "m1 = \"gpt-3.5-turbo\"\nm2 = \"gpt-4\"\nverifier = \"claude-3-opus\"\nthreshold = 8\n",
        )
        .unwrap();
        let p = RoutingPolicyFile::load(&toml_path).unwrap();
        assert_eq!(p.policy.threshold, 8);
        assert_eq!(p.random_p.len(), 3);
        let json_path = dir.path().join("p.json");
        std::fs::write(&json_path, serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(RoutingPolicyFile::load(&json_path).unwrap(), p);
    }
}
