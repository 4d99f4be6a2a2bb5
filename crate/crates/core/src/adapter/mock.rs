//! Deterministic offline provider.
//!
//! Answers every internal task from a table of rules keyed by the end-user
//! query. Usage comes from [`count_tokens`]; latency is a fixed synthetic
//! value per latency class, so replays are reproducible bit for bit.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::prompt::{ContextAnswer, ResponseMode};
use super::{FinishReason, Prompt, Provider, ProviderReply, Task};
use crate::cache::embed::bag_of_words_similarity;
use crate::error::{Error, Result};
use crate::model::{count_tokens, LatencyClass, ModelSpec, TokenUsage};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Exact,
    #[default]
    Contains,
    Any,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRule {
    pub pattern: String,
    #[serde(rename = "match")]
    pub match_mode: MatchMode,
    /// Restricts the rule to one model id.
    pub model: Option<String>,
    pub response: Option<String>,
    pub verifier_score: Option<u8>,
    /// Verbatim verifier reply, e.g. to exercise unparsable output.
    pub verifier_raw: Option<String>,
    pub judge_score: Option<u8>,
    /// Context-model answers by attempt; the last entry repeats.
    #[serde(with = "context_answers")]
    pub context: Vec<ContextAnswer>,
    pub relevant: Option<bool>,
    pub followups: Vec<String>,
    /// Chat answers get a marker when this query is sent without context.
    pub requires_context: bool,
    /// Fail every call matching this rule with a transport error.
    pub fail: bool,
    /// Real wall-clock delay before replying.
    pub delay_ms: Option<u64>,
}

impl MockRule {
    fn with_pattern(pattern: &str, mode: MatchMode) -> Self {
        MockRule {
            pattern: pattern.to_string(),
            match_mode: mode,
            ..Default::default()
        }
    }

    pub fn exact(pattern: &str) -> Self {
        Self::with_pattern(pattern, MatchMode::Exact)
    }

    pub fn contains(pattern: &str) -> Self {
        Self::with_pattern(pattern, MatchMode::Contains)
    }

    pub fn any() -> Self {
        Self::with_pattern("", MatchMode::Any)
    }

    pub fn model(mut self, model: &str) -> Self {
        self.model = Some(model.to_string());
        self
    }

    pub fn response(mut self, text: &str) -> Self {
        self.response = Some(text.to_string());
        self
    }

    pub fn verifier_score(mut self, score: u8) -> Self {
        self.verifier_score = Some(score);
        self
    }

    pub fn verifier_raw(mut self, raw: &str) -> Self {
        self.verifier_raw = Some(raw.to_string());
        self
    }

    pub fn judge_score(mut self, score: u8) -> Self {
        self.judge_score = Some(score);
        self
    }

    pub fn context(mut self, answers: &[ContextAnswer]) -> Self {
        self.context = answers.to_vec();
        self
    }

    pub fn relevant(mut self, relevant: bool) -> Self {
        self.relevant = Some(relevant);
        self
    }

    pub fn followups(mut self, questions: &[&str]) -> Self {
        self.followups = questions.iter().map(|q| q.to_string()).collect();
        self
    }

    pub fn requires_context(mut self) -> Self {
        self.requires_context = true;
        self
    }

    pub fn fail(mut self) -> Self {
        self.fail = true;
        self
    }

    pub fn delay_ms(mut self, ms: u64) -> Self {
        self.delay_ms = Some(ms);
        self
    }

    fn matches(&self, subject: &str, model: &str) -> bool {
        if let Some(m) = &self.model {
            if m != model {
                return false;
            }
        }
        match self.match_mode {
            MatchMode::Exact => self.pattern == subject,
            MatchMode::Contains => subject.contains(&self.pattern),
            MatchMode::Any => true,
        }
    }
}

mod context_answers {
    use super::ContextAnswer;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[ContextAnswer], s: S) -> Result<S::Ok, S::Error> {
        let words: Vec<&str> = v
            .iter()
            .map(|a| match a {
                ContextAnswer::Standalone => "standalone",
                ContextAnswer::Needed => "needed",
            })
            .collect();
        s.serialize_str(&words.join(","))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ContextAnswer>, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_context_list(&s).map_err(serde::de::Error::custom)
    }
}

pub fn parse_context_list(s: &str) -> std::result::Result<Vec<ContextAnswer>, String> {
    s.split([',', ' ', ';'])
        .map(str::trim)
        .filter(|w| !w.is_empty())
        .map(|w| match w.to_ascii_lowercase().as_str() {
            "standalone" | "s" => Ok(ContextAnswer::Standalone),
            "needed" | "n" => Ok(ContextAnswer::Needed),
            other => Err(format!("unknown context answer {other:?}")),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub rules: Vec<MockRule>,
    pub default_verifier_score: u8,
    #[serde(with = "context_answers")]
    pub default_context: Vec<ContextAnswer>,
    pub default_relevant: bool,
    pub cache_mode: ResponseMode,
    pub summary: Option<String>,
    pub keygen_questions: usize,
    pub keygen_keywords: usize,
    pub latency_fast_ms: u64,
    pub latency_slow_ms: u64,
    /// Models whose every call fails with a transport error.
    pub failing_models: Vec<String>,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            rules: Vec::new(),
            default_verifier_score: 10,
            default_context: vec![ContextAnswer::Needed],
            default_relevant: true,
            cache_mode: ResponseMode::Generated,
            summary: None,
            keygen_questions: 2,
            keygen_keywords: 3,
            latency_fast_ms: 1200,
            latency_slow_ms: 3800,
            failing_models: Vec::new(),
        }
    }
}

impl MockConfig {
    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(MockConfig {
                rules: rules_from_csv(&text)?,
                ..Default::default()
            }),
            Some("json") => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string())),
            _ => toml::from_str(&text).map_err(|e| Error::Config(e.to_string())),
        }
    }

    pub fn latency_ms(&self, class: LatencyClass) -> u64 {
        match class {
            LatencyClass::Fast => self.latency_fast_ms,
            LatencyClass::Slow => self.latency_slow_ms,
        }
    }
}

/// Fixture table with columns `pattern,response,verifier_score,judge_score`
/// and optionally `match,model,context,relevant,delay_ms`.
pub fn rules_from_csv(text: &str) -> Result<Vec<MockRule>> {
    #[derive(Deserialize)]
    struct Row {
        pattern: String,
        #[serde(default)]
        response: Option<String>,
        #[serde(default)]
        verifier_score: Option<u8>,
        #[serde(default)]
        judge_score: Option<u8>,
        #[serde(default, rename = "match")]
        match_mode: Option<MatchMode>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        context: Option<String>,
        #[serde(default)]
        relevant: Option<bool>,
        #[serde(default)]
        delay_ms: Option<u64>,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rules = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Fixture(e.to_string()))?;
        let mode = match row.match_mode {
            Some(m) => m,
            None if row.pattern == "*" => MatchMode::Any,
            None => MatchMode::Contains,
        };
        rules.push(MockRule {
            pattern: row.pattern,
            match_mode: mode,
            model: row.model.filter(|m| !m.is_empty()),
            response: row.response.filter(|r| !r.is_empty()),
            verifier_score: row.verifier_score,
            judge_score: row.judge_score,
            context: parse_context_list(row.context.as_deref().unwrap_or("")).map_err(Error::Fixture)?,
            relevant: row.relevant,
            delay_ms: row.delay_ms,
            ..Default::default()
        });
    }
    Ok(rules)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCall {
    pub model_id: String,
    pub task: &'static str,
    pub subject: String,
}

#[derive(Debug)]
pub struct MockProvider {
    id: String,
    config: MockConfig,
    exact: HashMap<String, Vec<usize>>,
    log: Mutex<Vec<MockCall>>,
}

impl MockProvider {
    pub fn new(config: MockConfig) -> Self {
        Self::with_id("mock", config)
    }

    pub fn with_id(id: &str, config: MockConfig) -> Self {
        let mut exact: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, r) in config.rules.iter().enumerate() {
            if r.match_mode == MatchMode::Exact {
                exact.entry(r.pattern.clone()).or_default().push(i);
            }
        }
        MockProvider {
            id: id.to_string(),
            config,
            exact,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn calls(&self) -> Vec<MockCall> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_for(&self, task: &str) -> usize {
        self.log.lock().unwrap().iter().filter(|c| c.task == task).count()
    }

    pub fn reset(&self) {
        self.log.lock().unwrap().clear();
    }

    /// Exact rules first, then the remaining rules in table order.
    fn rule_for(&self, subject: &str, model: &str) -> Option<&MockRule> {
        if let Some(ids) = self.exact.get(subject) {
            if let Some(r) = ids.iter().map(|&i| &self.config.rules[i]).find(|r| r.matches(subject, model)) {
                return Some(r);
            }
        }
        self.config
            .rules
            .iter()
            .filter(|r| r.match_mode != MatchMode::Exact)
            .find(|r| r.matches(subject, model))
    }

    fn reply_for(&self, model: &ModelSpec, prompt: &Prompt, rule: Option<&MockRule>) -> String {
        let cfg = &self.config;
        match &prompt.task {
            Task::Chat => {
                let mut text = rule
                    .and_then(|r| r.response.clone())
                    .unwrap_or_else(|| format!("{} answers: {}", model.model_id, prompt.query));
                if rule.is_some_and(|r| r.requires_context) && prompt.turns.is_empty() {
                    text.push_str(" (answered without context)");
                }
                text
            }
            Task::Verify { .. } => {
                if let Some(raw) = rule.and_then(|r| r.verifier_raw.clone()) {
                    return raw;
                }
                let score = rule
                    .and_then(|r| r.verifier_score)
                    .unwrap_or(cfg.default_verifier_score);
                format!("SCORE: {score}\nRATIONALE: fixture score")
            }
            Task::ContextDecision { attempt, .. } => {
                let answers = rule
                    .map(|r| r.context.as_slice())
                    .filter(|a| !a.is_empty())
                    .unwrap_or(cfg.default_context.as_slice());
                let answer = answers
                    .get(*attempt as usize)
                    .or(answers.last())
                    .copied()
                    .unwrap_or(ContextAnswer::Needed);
                match answer {
                    ContextAnswer::Standalone => "STANDALONE".into(),
                    ContextAnswer::Needed => "NEEDED".into(),
                }
            }
            Task::Summarize { messages, .. } => cfg
                .summary
                .clone()
                .unwrap_or_else(|| format!("Summary of {messages} earlier messages.")),
            Task::KeyGen { chunk, questions } => mock_keys(chunk, (*questions).min(cfg.keygen_questions), cfg.keygen_keywords),
            Task::CacheAnswer { query, items } => {
                let relevant = rule.and_then(|r| r.relevant).unwrap_or(cfg.default_relevant);
                if !relevant || items.is_empty() {
                    return "IRRELEVANT".into();
                }
                let item = &items[0];
                let (mode, answer) = match cfg.cache_mode {
                    ResponseMode::AsIs => ("as_is", item.clone()),
                    ResponseMode::Rewritten => ("rewritten", format!("Rewritten for \"{query}\": {item}")),
                    ResponseMode::Generated => ("generated", format!("{query} -> from cache: {item}")),
                };
                format!("MODE: {mode}\nITEM: 1\nANSWER: {answer}")
            }
            Task::Followups { query, n, .. } => {
                let listed = rule.map(|r| r.followups.clone()).unwrap_or_default();
                if !listed.is_empty() {
                    return listed.into_iter().take(*n).collect::<Vec<_>>().join("\n");
                }
                let topic: Vec<&str> = query.split_whitespace().take(6).collect();
                (1..=*n)
                    .map(|i| format!("Follow-up {i}: more about {}?", topic.join(" ")))
                    .collect::<Vec<_>>()
                    .join("\n")
            }
            Task::Judge {
                reference, candidate, ..
            } => {
                let score = if reference.trim() == candidate.trim() {
                    10
                } else if let Some(s) = rule.and_then(|r| r.judge_score) {
                    s.min(10)
                } else {
                    (bag_of_words_similarity(reference, candidate) * 10.0).round().clamp(0.0, 10.0) as u8
                };
                format!("SCORE: {score}\nRATIONALE: fixture judgement")
            }
        }
    }
}

fn mock_keys(chunk: &str, questions: usize, keywords: usize) -> String {
    let sentences = crate::cache::chunk::sentences(chunk);
    let mut out = Vec::new();
    for s in sentences.iter().cycle().take(questions.max(1)).enumerate() {
        let words: Vec<&str> = s.1.split_whitespace().take(5).collect();
        out.push(format!("QUESTION: What does the text say about {}? ({})", words.join(" "), s.0 + 1));
    }
    let mut seen = Vec::new();
    for w in chunk.split(|c: char| !c.is_alphanumeric()) {
        let w = w.to_ascii_lowercase();
        if w.len() >= 4 && !seen.contains(&w) {
            seen.push(w);
        }
        if seen.len() == keywords.max(1) {
            break;
        }
    }
    if seen.is_empty() {
        seen.push(chunk.split_whitespace().next().unwrap_or("text").to_ascii_lowercase());
    }
    out.push(format!("KEYWORDS: {}", seen.join(", ")));
    out.push(format!("SUMMARY: {}", sentences.first().map(String::as_str).unwrap_or(chunk)));
    for s in &sentences {
        out.push(format!("FACT: {s}"));
    }
    out.join("\n")
}

#[async_trait]
impl Provider for MockProvider {
    fn id(&self) -> &str {
        &self.id
    }

    async fn send(&self, model: &ModelSpec, prompt: &Prompt) -> Result<ProviderReply> {
        let subject = prompt.task.subject(&prompt.query);
        let rule = self.rule_for(subject, &model.model_id);
        self.log.lock().unwrap().push(MockCall {
            model_id: model.model_id.clone(),
            task: prompt.task.name(),
            subject: subject.to_string(),
        });
        if let Some(ms) = rule.and_then(|r| r.delay_ms) {
            tokio::time::sleep(Duration::from_millis(ms)).await;
        }
        let fails = rule.is_some_and(|r| r.fail) || self.config.failing_models.contains(&model.model_id);
        if fails {
            return Err(Error::Transport {
                provider: self.id.clone(),
                message: format!("mock failure for {}", model.model_id),
            });
        }
        let text = self.reply_for(model, prompt, rule);
        Ok(ProviderReply {
            usage: Some(TokenUsage::new(prompt.prompt_tokens(), count_tokens(&text))),
            text,
            finish_reason: FinishReason::Complete,
            duration_ms: Some(self.config.latency_ms(model.latency_class)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;

    fn spec(id: &str) -> ModelSpec {
        Catalog::builtin().get(id).unwrap().clone()
    }

    #[tokio::test]
    async fn exact_rule_beats_contains_rule() {
        let cfg = MockConfig::default()
            .rule(MockRule::contains("ping").response("contains"))
            .rule(MockRule::exact("ping").response("exact"));
        let mock = MockProvider::new(cfg);
        let reply = mock.send(&spec("gpt-4o"), &Prompt::chat("", &[], "ping")).await.unwrap();
        assert_eq!(reply.text, "exact");
        let reply = mock.send(&spec("gpt-4o"), &Prompt::chat("", &[], "ping pong")).await.unwrap();
        assert_eq!(reply.text, "contains");
    }

    #[tokio::test]
    async fn synthetic_latency_follows_latency_class() {
        let mock = MockProvider::new(MockConfig::default());
        let fast = mock.send(&spec("claude-3-haiku"), &Prompt::chat("", &[], "q")).await.unwrap();
        let slow = mock.send(&spec("gpt-4"), &Prompt::chat("", &[], "q")).await.unwrap();
        assert_eq!(fast.duration_ms, Some(1200));
        assert_eq!(slow.duration_ms, Some(3800));
    }

    #[tokio::test]
    async fn context_answers_follow_attempt_index() {
        let cfg = MockConfig::default().rule(
            MockRule::exact("q").context(&[ContextAnswer::Standalone, ContextAnswer::Needed]),
        );
        let mock = MockProvider::new(cfg);
        let m = spec("gpt-4o-mini");
        let a0 = mock.send(&m, &Prompt::context_decision(&[], "q", 0)).await.unwrap();
        let a1 = mock.send(&m, &Prompt::context_decision(&[], "q", 1)).await.unwrap();
        assert_eq!(a0.text, "STANDALONE");
        assert_eq!(a1.text, "NEEDED");
    }

    #[test]
    fn csv_rules_load() {
        let text = "pattern,response,verifier_score,judge_score,context\n\
                    ping,pong,9,,\n\
                    *,,,7,standalone\n";
        let rules = rules_from_csv(text).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].verifier_score, Some(9));
        assert_eq!(rules[0].judge_score, None);
        assert_eq!(rules[1].match_mode, MatchMode::Any);
        assert_eq!(rules[1].context, vec![ContextAnswer::Standalone]);
    }

    #[tokio::test]
    async fn judge_identity_scores_ten() {
        let mock = MockProvider::new(MockConfig::default());
        let t = super::super::prompt::Turns {
            current: "same".into(),
            previous: None,
        };
        let reply = mock.send(&spec("gpt-4o"), &Prompt::judge("q", &t, &t)).await.unwrap();
        assert!(reply.text.starts_with("SCORE: 10"));
    }
}
