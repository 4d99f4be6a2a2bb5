//! A cost-optimizing proxy between chat applications and LLM providers.
//!
//! Requests pass through a semantic cache, a context manager that decides
//! how much conversation history to send, and a model adapter that can route
//! between a cheap and an expensive model with a verifier. Every answer
//! carries metadata (model, context size, cache hit, cost) so clients can
//! regenerate under a different service type.

pub mod adapter;
pub mod cache;
pub mod catalog;
pub mod context;
pub mod error;
pub mod gateway;
pub mod model;
pub mod money;
pub mod replay;
pub mod service;
pub mod store;
pub mod trace;

pub use error::{Error, ErrorClass, Result};
pub use model::{cost_of, count_tokens, lastk_input_tokens, MessageRecord, ModelSpec, TokenUsage};
pub use money::Usd;
pub use service::ServiceType;
