//! Provider-neutral prompts and the internal task prompts the proxy issues
//! (verification, context decisions, summaries, cache keys, ...), together
//! with strict parsers for their replies.

use serde::{Deserialize, Serialize};

use super::ResponseFormat;
use crate::model::{count_tokens, MessageRecord};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub query: String,
    pub response: String,
}

/// Which internal job a prompt performs. Real backends only see the rendered
/// text; the mock provider answers from this structured description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Task {
    Chat,
    Verify { query: String, candidate: String, attempt: u8 },
    ContextDecision { query: String, attempt: u8 },
    Summarize { query: String, messages: usize },
    KeyGen { chunk: String, questions: usize },
    CacheAnswer { query: String, items: Vec<String> },
    Followups { query: String, answer: String, n: usize },
    Judge { query: String, reference: String, candidate: String },
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Chat => "chat",
            Task::Verify { .. } => "verify",
            Task::ContextDecision { .. } => "context_decision",
            Task::Summarize { .. } => "summarize",
            Task::KeyGen { .. } => "key_gen",
            Task::CacheAnswer { .. } => "cache_answer",
            Task::Followups { .. } => "followups",
            Task::Judge { .. } => "judge",
        }
    }

    /// The end-user query the task is about.
    pub fn subject<'a>(&'a self, prompt_query: &'a str) -> &'a str {
        match self {
            Task::Chat => prompt_query,
            Task::Verify { query, .. }
            | Task::ContextDecision { query, .. }
            | Task::Summarize { query, .. }
            | Task::CacheAnswer { query, .. }
            | Task::Followups { query, .. }
            | Task::Judge { query, .. } => query,
            Task::KeyGen { chunk, .. } => chunk,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub task: Task,
    pub system: String,
    pub turns: Vec<Turn>,
    pub query: String,
    pub response_format: ResponseFormat,
    pub temperature: f32,
}

impl Prompt {
    pub fn chat(system: &str, context: &[MessageRecord], query: &str) -> Self {
        Prompt {
            task: Task::Chat,
            system: system.to_string(),
            turns: context
                .iter()
                .map(|m| Turn {
                    query: m.query.clone(),
                    response: m.response.clone(),
                })
                .collect(),
            query: query.to_string(),
            response_format: ResponseFormat::Text,
            temperature: 0.0,
        }
    }

    fn internal(task: Task, system: String, query: String) -> Self {
        Prompt {
            task,
            system,
            turns: Vec::new(),
            query,
            response_format: ResponseFormat::Text,
            temperature: 0.0,
        }
    }

    pub fn with_format(mut self, format: ResponseFormat) -> Self {
        self.response_format = format;
        self
    }

    pub fn with_temperature(mut self, t: f32) -> Self {
        self.temperature = t.clamp(0.0, 2.0);
        self
    }

    /// Input tokens under the mock tokenizer, counted per part so that a chat
    /// prompt costs exactly `I_i + sum(I_j + O_j)` over its context.
    pub fn prompt_tokens(&self) -> u64 {
        count_tokens(&self.system)
            + self
                .turns
                .iter()
                .map(|t| count_tokens(&t.query) + count_tokens(&t.response))
                .sum::<u64>()
            + count_tokens(&self.query)
    }

    pub fn verify(query: &str, candidate: &str, attempt: u8) -> Self {
        let mut system = String::from(
            "You are grading an answer written by another assistant. Rate how well the \
             candidate answers the question on a scale from 0 to 10. Reply with a line \
             `SCORE: <integer>` followed by a line `RATIONALE: <one sentence>`.",
        );
        if attempt > 0 {
            system.push_str(" Your previous reply could not be read; follow the format exactly.");
        }
        Self::internal(
            Task::Verify {
                query: query.to_string(),
                candidate: candidate.to_string(),
                attempt,
            },
            system,
            format!("Question:\n{query}\n\nCandidate answer:\n{candidate}"),
        )
    }

    pub fn context_decision(context: &[MessageRecord], query: &str, attempt: u8) -> Self {
        let mut body = String::from("Conversation so far:\n");
        for m in context {
            body.push_str(&format!("User: {}\nAssistant: {}\n", m.query, m.response));
        }
        body.push_str(&format!("\nNew query: {query}"));
        Self::internal(
            Task::ContextDecision {
                query: query.to_string(),
                attempt,
            },
            "Decide whether the new query can be answered without the conversation so far. \
             Reply with exactly one word: STANDALONE if it can, NEEDED if the conversation \
             is required."
                .to_string(),
            body,
        )
    }

    pub fn summarize(history: &[MessageRecord], query: &str, cap_words: u64) -> Self {
        let mut body = String::new();
        for m in history {
            body.push_str(&format!("User: {}\nAssistant: {}\n", m.query, m.response));
        }
        body.push_str(&format!("\nThe summary will be used to answer: {query}"));
        Self::internal(
            Task::Summarize {
                query: query.to_string(),
                messages: history.len(),
            },
            format!(
                "Summarize the conversation below into a single message of at most {cap_words} \
                 words. Keep every fact needed to answer follow-up questions."
            ),
            body,
        )
    }

    pub fn key_gen(chunk: &str, questions: usize) -> Self {
        Self::internal(
            Task::KeyGen {
                chunk: chunk.to_string(),
                questions,
            },
            format!(
                "For the passage below write: up to {questions} hypothetical questions the \
                 passage answers, one per line prefixed `QUESTION:`; one line `KEYWORDS:` with \
                 comma-separated key words; one line `SUMMARY:` with a one-sentence summary; \
                 and every fact in the passage, one per line prefixed `FACT:`."
            ),
            chunk.to_string(),
        )
    }

    pub fn cache_answer(query: &str, context: &[MessageRecord], items: &[String]) -> Self {
        let mut body = String::new();
        if !context.is_empty() {
            body.push_str("Conversation so far:\n");
            for m in context {
                body.push_str(&format!("User: {}\nAssistant: {}\n", m.query, m.response));
            }
            body.push('\n');
        }
        body.push_str("Cached items:\n");
        for (i, item) in items.iter().enumerate() {
            body.push_str(&format!("[{}] {}\n", i + 1, item));
        }
        body.push_str(&format!("\nQuery: {query}"));
        Self::internal(
            Task::CacheAnswer {
                query: query.to_string(),
                items: items.to_vec(),
            },
            "Decide whether any cached item is relevant and sufficient to answer the query. \
             If none is, reply exactly `IRRELEVANT`. Otherwise reply with a line \
             `MODE: as_is|rewritten|generated`, a line `ITEM: <number>`, and a line \
             `ANSWER:` followed by the answer. Use as_is when the item already answers the \
             query, rewritten when it needs adapting, generated when combining it with the \
             query and conversation."
                .to_string(),
            body,
        )
    }

    pub fn followups(query: &str, answer: &str, n: usize) -> Self {
        Self::internal(
            Task::Followups {
                query: query.to_string(),
                answer: answer.to_string(),
                n,
            },
            format!(
                "Suggest {n} short follow-up questions the user is likely to ask next. \
                 Reply with one question per line and nothing else."
            ),
            format!("User: {query}\nAssistant: {answer}"),
        )
    }

    pub fn judge(query: &str, reference: &Turns, candidate: &Turns) -> Self {
        let mut body = format!("Query:\n{query}\n\n");
        if let (Some(rp), Some(cp)) = (&reference.previous, &candidate.previous) {
            body.push_str(&format!(
                "Previous reference reply:\n{rp}\n\nPrevious candidate reply:\n{cp}\n\n"
            ));
        }
        body.push_str(&format!(
            "Reference reply:\n{}\n\nCandidate reply:\n{}",
            reference.current, candidate.current
        ));
        Self::internal(
            Task::Judge {
                query: query.to_string(),
                reference: reference.current.clone(),
                candidate: candidate.current.clone(),
            },
            "You are an impartial judge. Score how well the candidate reply matches the \
             quality and content of the reference reply on a scale from 0 to 10. Reply with \
             a line `SCORE: <integer>` followed by a line `RATIONALE: <one sentence>`."
                .to_string(),
            body,
        )
    }
}

/// A reply and, optionally, the reply that preceded it in the same
/// conversation. The judge sees one previous exchange at most.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turns {
    pub current: String,
    pub previous: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextAnswer {
    Standalone,
    Needed,
}

/// `SCORE: n` anywhere in the reply, or a reply that is a bare integer.
pub fn parse_score(reply: &str) -> Option<(u8, String)> {
    let trimmed = reply.trim();
    if let Ok(n) = trimmed.parse::<u8>() {
        return (n <= 10).then(|| (n, String::new()));
    }
    let mut score = None;
    let mut rationale = String::new();
    for line in trimmed.lines() {
        let line = line.trim();
        if let Some(rest) = strip_label(line, "SCORE:") {
            let digits: String = rest.trim().chars().take_while(|c| c.is_ascii_digit()).collect();
            score = digits.parse::<u8>().ok();
        } else if let Some(rest) = strip_label(line, "RATIONALE:") {
            rationale = rest.trim().to_string();
        }
    }
    score.filter(|s| *s <= 10).map(|s| (s, rationale))
}

/// `None` means the reply could not be read.
pub fn parse_context_answer(reply: &str) -> Option<ContextAnswer> {
    let word: String = reply
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match word.as_str() {
        "standalone" => Some(ContextAnswer::Standalone),
        "needed" | "context needed" => Some(ContextAnswer::Needed),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GeneratedKeys {
    pub questions: Vec<String>,
    pub keywords: Vec<String>,
    pub summary: String,
    pub facts: Vec<String>,
}

pub fn parse_keys(reply: &str) -> Option<GeneratedKeys> {
    let mut keys = GeneratedKeys::default();
    for line in reply.lines().map(str::trim) {
        if let Some(q) = strip_label(line, "QUESTION:") {
            push_nonempty(&mut keys.questions, q);
        } else if let Some(k) = strip_label(line, "KEYWORDS:") {
            for word in k.split(',') {
                push_nonempty(&mut keys.keywords, word);
            }
        } else if let Some(s) = strip_label(line, "SUMMARY:") {
            keys.summary = s.trim().to_string();
        } else if let Some(f) = strip_label(line, "FACT:") {
            push_nonempty(&mut keys.facts, f);
        }
    }
    let complete = !keys.questions.is_empty()
        && !keys.keywords.is_empty()
        && !keys.summary.is_empty()
        && !keys.facts.is_empty();
    complete.then_some(keys)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseMode {
    AsIs,
    Rewritten,
    Generated,
}

impl ResponseMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ResponseMode::AsIs => "as_is",
            ResponseMode::Rewritten => "rewritten",
            ResponseMode::Generated => "generated",
        }
    }
}

impl std::str::FromStr for ResponseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "as_is" => Ok(ResponseMode::AsIs),
            "rewritten" => Ok(ResponseMode::Rewritten),
            "generated" => Ok(ResponseMode::Generated),
            other => Err(format!("unknown response mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CacheVerdict {
    Irrelevant,
    Answer {
        mode: ResponseMode,
        item: usize,
        text: String,
    },
}

/// Item numbers are 1-based in the reply and 0-based in the result.
pub fn parse_cache_verdict(reply: &str, items: usize) -> Option<CacheVerdict> {
    let trimmed = reply.trim();
    if trimmed.eq_ignore_ascii_case("irrelevant") {
        return Some(CacheVerdict::Irrelevant);
    }
    let mut mode = None;
    let mut item = None;
    let mut answer: Option<String> = None;
    for line in trimmed.lines() {
        if let Some(text) = answer.as_mut() {
            text.push('\n');
            text.push_str(line);
            continue;
        }
        let l = line.trim();
        if let Some(m) = strip_label(l, "MODE:") {
            mode = m.parse().ok();
        } else if let Some(i) = strip_label(l, "ITEM:") {
            item = i.trim().parse::<usize>().ok();
        } else if let Some(a) = strip_label(l, "ANSWER:") {
            answer = Some(a.trim_start().to_string());
        }
    }
    let item = item?.checked_sub(1).filter(|i| *i < items)?;
    let text = answer?.trim().to_string();
    if text.is_empty() {
        return None;
    }
    Some(CacheVerdict::Answer {
        mode: mode?,
        item,
        text,
    })
}

pub fn parse_followups(reply: &str, n: usize) -> Vec<String> {
    reply
        .lines()
        .map(|l| {
            l.trim()
                .trim_start_matches(|c: char| c.is_ascii_digit() || matches!(c, '.' | ')' | '-' | '*'))
                .trim()
                .to_string()
        })
        .filter(|l| !l.is_empty())
        .take(n)
        .collect()
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    if line.len() >= label.len() && line[..label.len()].eq_ignore_ascii_case(label) {
        Some(&line[label.len()..])
    } else {
        None
    }
}

fn push_nonempty(v: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        v.push(s.to_string());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("SCORE: 9\nRATIONALE: good").unwrap(), (9, "good".into()));
        assert_eq!(parse_score("  7 ").unwrap().0, 7);
        assert_eq!(parse_score("score: 10/10").unwrap().0, 10);
        assert!(parse_score("SCORE: 11").is_none());
        assert!(parse_score("I would say it is quite good").is_none());
        assert!(parse_score("").is_none());
    }

    #[test]
    fn context_answers() {
        assert_eq!(parse_context_answer("STANDALONE"), Some(ContextAnswer::Standalone));
        assert_eq!(parse_context_answer(" needed."), Some(ContextAnswer::Needed));
        assert_eq!(parse_context_answer("maybe?"), None);
    }

    #[test]
    fn key_parsing_requires_every_section() {
        let reply = "QUESTION: What is X?\nQUESTION: Why Y?\nKEYWORDS: a, b ,c\nSUMMARY: s\nFACT: f1\nFACT: f2";
        let keys = parse_keys(reply).unwrap();
        assert_eq!(keys.questions.len(), 2);
        assert_eq!(keys.keywords, vec!["a", "b", "c"]);
        assert_eq!(keys.facts.len(), 2);
        assert!(parse_keys("QUESTION: only").is_none());
    }

    #[test]
    fn cache_verdicts() {
        assert_eq!(parse_cache_verdict("irrelevant", 2), Some(CacheVerdict::Irrelevant));
        let v = parse_cache_verdict("MODE: rewritten\nITEM: 2\nANSWER: line one\nline two", 2).unwrap();
        assert_eq!(
            v,
            CacheVerdict::Answer {
                mode: ResponseMode::Rewritten,
                item: 1,
                text: "line one\nline two".into()
            }
        );
        assert!(parse_cache_verdict("MODE: as_is\nITEM: 3\nANSWER: x", 2).is_none());
        assert!(parse_cache_verdict("MODE: as_is\nITEM: 0\nANSWER: x", 2).is_none());
        assert!(parse_cache_verdict("whatever", 2).is_none());
    }

    #[test]
    fn followup_lines_are_cleaned() {
        let f = parse_followups("1. First?\n- Second?\n\n3) Third?\nFourth?", 3);
        assert_eq!(f, vec!["First?", "Second?", "Third?"]);
    }

    #[test]
    fn chat_prompt_tokens_are_additive_over_turns() {
        let rec = |q: &str, r: &str| MessageRecord {
            request_id: "r".into(),
            user_id: "u".into(),
            session_id: "s".into(),
            query: q.into(),
            response: r.into(),
            model_id: "m".into(),
            usage: Default::default(),
            cost_usd: Default::default(),
            timestamp: chrono::Utc::now(),
            duration_ms: 0,
            service_type: crate::service::ServiceType::OptCost,
            metadata: Default::default(),
            supersedes: None,
            synthetic: false,
        };
        let ctx = vec![rec("a b", "c d e"), rec("f", "g")];
        let p = Prompt::chat("", &ctx, "h i j k");
        assert_eq!(p.prompt_tokens(), 3 + 4 + 1 + 1 + 5);
    }
}
