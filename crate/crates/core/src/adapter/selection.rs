//! Verifier-based model selection.
//!
//! A cheap model answers every prompt, a verifier scores the candidate, and
//! the expensive model is consulted only when the score falls below the
//! threshold.

use serde::{Deserialize, Serialize};

use super::prompt::parse_score;
use super::{CompletionRequest, CompletionResult, ModelAdapter, Prompt};
use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::money::Usd;
use crate::trace::{CallRole, Component, ModelCall, Trace};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    /// Low-cost model that answers every prompt.
    pub m1: String,
    /// High-cost model consulted on escalation.
    pub m2: String,
    pub verifier: String,
    /// Escalate iff the verifier score is strictly below this value (1..=11).
    pub threshold: u8,
}

impl VerificationPolicy {
    pub fn new(m1: &str, m2: &str, verifier: &str, threshold: u8) -> Self {
        VerificationPolicy {
            m1: m1.into(),
            m2: m2.into(),
            verifier: verifier.into(),
            threshold,
        }
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        for id in [&self.m1, &self.m2, &self.verifier] {
            catalog.get(id)?;
        }
        if !(1..=11).contains(&self.threshold) {
            return Err(Error::BadRequest(format!(
                "verification threshold {} outside 1..=11",
                self.threshold
            )));
        }
        Ok(())
    }

    /// The escalation rule on a parsed score; unparsable output escalates.
    pub fn escalates(&self, score: Option<u8>) -> bool {
        match score {
            Some(s) => s < self.threshold,
            None => true,
        }
    }
}

/// Everything the selection did for one prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub calls: Vec<ModelCall>,
    /// Parsed verifier score; `None` when the verifier could not be read.
    pub score: Option<u8>,
    pub unparsable_verifier: bool,
    pub escalated: bool,
    pub answered_by: String,
}

impl SelectionTrace {
    pub fn cost(&self) -> Usd {
        self.calls.iter().map(|c| c.cost_usd).sum()
    }

    pub fn duration_ms(&self) -> u64 {
        self.calls.iter().map(|c| c.duration_ms).sum()
    }
}

impl ModelAdapter {
    pub async fn select_with_verification(
        &self,
        policy: &VerificationPolicy,
        req: &CompletionRequest,
        trace: &mut Trace,
    ) -> Result<(CompletionResult, SelectionTrace)> {
        if req.model.is_some() {
            return Err(Error::Precondition(
                "verification selection requires a request without an explicit model".into(),
            ));
        }
        policy.validate(self.catalog())?;
        let mut local = Trace::new();
        let result = self.run_selection(policy, req, &mut local).await;
        let calls = local.calls.clone();
        trace.extend(local);
        let (result, score, unparsable, escalated) = result?;
        Ok((
            result.clone(),
            SelectionTrace {
                calls,
                score,
                unparsable_verifier: unparsable,
                escalated,
                answered_by: result.model_id,
            },
        ))
    }

    async fn run_selection(
        &self,
        policy: &VerificationPolicy,
        req: &CompletionRequest,
        trace: &mut Trace,
    ) -> Result<(CompletionResult, Option<u8>, bool, bool)> {
        let candidate = self
            .call(&policy.m1, req.prompt(), Component::ModelAdapter, CallRole::Candidate, trace)
            .await?;

        // strict parse, one re-ask, then treat as failing the threshold
        let mut score = None;
        for attempt in 0..2u8 {
            let reply = self
                .call(
                    &policy.verifier,
                    Prompt::verify(&req.query, &candidate.text, attempt),
                    Component::ModelAdapter,
                    CallRole::Verifier,
                    trace,
                )
                .await;
            match reply {
                Ok(r) => {
                    if let Some((s, _)) = parse_score(&r.text) {
                        score = Some(s);
                        break;
                    }
                }
                Err(e) if e.is_retryable() => break,
                Err(e) => return Err(e),
            }
        }
        let unparsable = score.is_none();
        if unparsable {
            trace.note("verifier output unparsable; escalating");
        }
        if !policy.escalates(score) {
            return Ok((candidate, score, unparsable, false));
        }
        match self
            .call(&policy.m2, req.prompt(), Component::ModelAdapter, CallRole::Escalation, trace)
            .await
        {
            Ok(better) => Ok((better, score, unparsable, true)),
            Err(e) => Err(Error::Escalation {
                model: policy.m2.clone(),
                source: Box::new(e),
                fallback: Box::new(candidate),
            }),
        }
    }
}
