//! LLM-as-judge scoring of a candidate reply against a reference reply.

use super::prompt::{parse_score, Turns};
use super::{ModelAdapter, Prompt};
use crate::error::{Error, Result};
use crate::model::{JudgeScore, Judgement};
use crate::trace::{CallRole, Component, Trace};

impl ModelAdapter {
    /// Scores `candidate` against `reference` on 0..=10. Each side may carry
    /// the reply to the previous query, which the judge sees as well.
    pub async fn judge(
        &self,
        judge_model: &str,
        query: &str,
        reference: &Turns,
        candidate: &Turns,
        trace: &mut Trace,
    ) -> Result<Judgement> {
        if reference.current.trim().is_empty() || candidate.current.trim().is_empty() {
            return Err(Error::Precondition("judge needs non-empty reference and candidate".into()));
        }
        let reply = self
            .call(
                judge_model,
                Prompt::judge(query, reference, candidate),
                Component::Judge,
                CallRole::Judge,
                trace,
            )
            .await?;
        let (score, rationale) = parse_score(&reply.text).ok_or_else(|| Error::JudgeFormat(reply.text.clone()))?;
        Ok(Judgement {
            score: JudgeScore::new(score).ok_or_else(|| Error::JudgeFormat(reply.text.clone()))?,
            rationale,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::mock::{MockConfig, MockProvider, MockRule};
    use super::*;
    use crate::catalog::Catalog;

    fn adapter(cfg: MockConfig) -> ModelAdapter {
        ModelAdapter::new(Arc::new(Catalog::builtin())).with_fallback(Arc::new(MockProvider::new(cfg)))
    }

    fn turns(s: &str) -> Turns {
        Turns {
            current: s.into(),
            previous: None,
        }
    }

    #[tokio::test]
    async fn identical_reply_scores_ten() {
        let a = adapter(MockConfig::default());
        let j = a
            .judge("gpt-4", "q", &turns("same answer"), &turns("same answer"), &mut Trace::new())
            .await
            .unwrap();
        assert_eq!(j.score.value(), 10);
    }

    #[tokio::test]
    async fn fixture_score_is_used() {
        let a = adapter(MockConfig::default().rule(MockRule::exact("q7").judge_score(7)));
        let j = a
            .judge("gpt-4", "q7", &turns("reference"), &turns("other"), &mut Trace::new())
            .await
            .unwrap();
        assert_eq!(j.score.value(), 7);
    }

    #[tokio::test]
    async fn empty_candidate_is_rejected() {
        let a = adapter(MockConfig::default());
        let err = a
            .judge("gpt-4", "q", &turns("reference"), &turns("  "), &mut Trace::new())
            .await
            .unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    struct Garbage;

    #[async_trait::async_trait]
    impl super::super::Provider for Garbage {
        fn id(&self) -> &str {
            "garbage"
        }
        async fn send(&self, _: &crate::model::ModelSpec, _: &Prompt) -> Result<super::super::ProviderReply> {
            Ok(super::super::ProviderReply {
                text: "great answer".into(),
                usage: None,
                finish_reason: super::super::FinishReason::Complete,
                duration_ms: Some(1),
            })
        }
    }

    #[tokio::test]
    async fn unreadable_judge_is_a_format_error() {
        let a = ModelAdapter::new(Arc::new(Catalog::builtin())).with_fallback(Arc::new(Garbage));
        let err = a
            .judge("gpt-4", "q", &turns("a b"), &turns("a c"), &mut Trace::new())
            .await
            .unwrap_err();
        assert!(matches!(err, Error::JudgeFormat(_)));
    }

    #[tokio::test]
    async fn similarity_fallback_without_fixture() {
        let a = adapter(MockConfig::default());
        let j = a
            .judge("gpt-4", "q", &turns("a b"), &turns("a c"), &mut Trace::new())
            .await
            .unwrap();
        assert_eq!(j.score.value(), 5);
    }
}
