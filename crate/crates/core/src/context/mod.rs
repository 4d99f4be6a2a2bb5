//! Conversation history and per-request context assembly.
//!
//! History is read from the [`Store`](crate::store::Store) and narrowed by a
//! [`FilterPlan`]: each group is a chain of filters applied left to right,
//! and the outputs of all groups are joined chronologically without
//! duplicates.

pub mod filter;
mod manager;

pub use filter::{ContextFilter, FilterPlan};
pub use manager::{fit_newest, ContextManager, ContextOutcome};
