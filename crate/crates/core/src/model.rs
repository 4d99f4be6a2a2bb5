//! Shared domain types and token accounting.

use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::money::{TokenPrice, Usd};
use crate::service::ServiceType;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        input_tokens: 0,
        output_tokens: 0,
    };

    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;
    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(
            self.input_tokens + rhs.input_tokens,
            self.output_tokens + rhs.output_tokens,
        )
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::ZERO, Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyClass {
    Fast,
    Slow,
}

impl std::str::FromStr for LatencyClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fast" => Ok(LatencyClass::Fast),
            "slow" => Ok(LatencyClass::Slow),
            other => Err(format!("unknown latency class {other:?}")),
        }
    }
}

/// A provider-qualified model and its prices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_id: String,
    pub provider_id: String,
    pub input_price: TokenPrice,
    pub output_price: TokenPrice,
    pub latency_class: LatencyClass,
    pub context_window: u64,
}

impl ModelSpec {
    /// Combined per-token price, used to rank models by cost.
    pub fn price_rank(&self) -> TokenPrice {
        TokenPrice::from_pico_per_token(
            self.input_price.times(1).pico() + self.output_price.times(1).pico(),
        )
    }
}

/// One query/response exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub request_id: String,
    pub user_id: String,
    pub session_id: String,
    pub query: String,
    pub response: String,
    pub model_id: String,
    pub usage: TokenUsage,
    pub cost_usd: Usd,
    pub timestamp: DateTime<Utc>,
    pub duration_ms: u64,
    pub service_type: ServiceType,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    /// Request this record replaces in future context.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supersedes: Option<String>,
    /// Produced by a rewriting filter; never persisted or embedded.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub synthetic: bool,
}

/// A 0..=10 quality score from a judge or verifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct JudgeScore(u8);

impl JudgeScore {
    pub const MAX: u8 = 10;

    pub fn new(score: u8) -> Option<Self> {
        (score <= Self::MAX).then_some(JudgeScore(score))
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for JudgeScore {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        JudgeScore::new(v).ok_or_else(|| format!("score {v} outside 0..=10"))
    }
}

impl From<JudgeScore> for u8 {
    fn from(s: JudgeScore) -> u8 {
        s.0
    }
}

/// A judged score together with the judge's explanation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    pub score: JudgeScore,
    pub rationale: String,
}

/// Mock token count: `round_half_up(1.3 * words)`, at least 1 for non-empty text.
pub fn count_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    tokens_for_words(words)
}

pub fn tokens_for_words(words: u64) -> u64 {
    if words == 0 {
        return 0;
    }
    ((13 * words + 5) / 10).max(1)
}

pub fn cost_of(usage: TokenUsage, model: &ModelSpec) -> Usd {
    model.input_price.times(usage.input_tokens) + model.output_price.times(usage.output_tokens)
}

/// Total input tokens sent to the chat model over a conversation when each
/// query carries the `k` previous query/response pairs as context.
///
/// Message `i` costs `I_i + sum_{j=i-k}^{i-1} (I_j + O_j)`, with indices
/// before the first message contributing nothing.
pub fn lastk_input_tokens(per_message: &[TokenUsage], k: usize) -> u64 {
    // prefix[i] = sum of (I_j + O_j) for j < i
    let mut prefix = Vec::with_capacity(per_message.len() + 1);
    prefix.push(0u64);
    for m in per_message {
        let last = *prefix.last().unwrap();
        prefix.push(last + m.total());
    }
    per_message
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let start = i.saturating_sub(k);
            m.input_tokens + prefix[i] - prefix[start]
        })
        .sum()
}

/// `I*N + (I+O)*N*(N-1)/2`: full-history input tokens for uniform messages.
pub fn full_context_closed_form(n: u64, input: u64, output: u64) -> u64 {
    input * n + (input + output) * n * n.saturating_sub(1) / 2
}
