use serde::{Deserialize, Serialize};

use crate::model::TokenUsage;
use crate::money::Usd;

/// Proxy component that issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    ModelAdapter,
    ContextManager,
    Cache,
    Coordinator,
    Judge,
}

/// What a call was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallRole {
    Chat,
    Candidate,
    Verifier,
    Escalation,
    ContextDecision,
    Summarize,
    KeyGen,
    CacheAnswer,
    Followups,
    Judge,
}

impl CallRole {
    /// Whether the call produced the user-visible answer with an expensive
    /// chat model (as opposed to an auxiliary cheap-model task).
    pub fn is_chat_answer(self) -> bool {
        matches!(self, CallRole::Chat | CallRole::Candidate | CallRole::Escalation)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCall {
    pub component: Component,
    pub role: CallRole,
    pub model_id: String,
    pub usage: TokenUsage,
    pub cost_usd: Usd,
    pub duration_ms: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Ordered log of every model call made while serving one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub calls: Vec<ModelCall>,
    /// Component fallbacks and degradations, in the order they happened.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, call: ModelCall) {
        self.calls.push(call);
    }

    pub fn note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn usage(&self) -> TokenUsage {
        self.calls.iter().map(|c| c.usage).sum()
    }

    pub fn cost(&self) -> Usd {
        self.calls.iter().map(|c| c.cost_usd).sum()
    }

    pub fn duration_ms(&self) -> u64 {
        self.calls.iter().map(|c| c.duration_ms).sum()
    }

    pub fn count_role(&self, role: CallRole) -> usize {
        self.calls.iter().filter(|c| c.role == role).count()
    }

    pub fn has_chat_call(&self) -> bool {
        self.calls.iter().any(|c| c.role.is_chat_answer())
    }

    pub fn extend(&mut self, other: Trace) {
        self.calls.extend(other.calls);
        self.notes.extend(other.notes);
    }
}
