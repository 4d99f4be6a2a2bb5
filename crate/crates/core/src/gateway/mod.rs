//! The service facade: resolves service types, runs cache, context and
//! model stages in order, serializes each user's requests, persists records
//! and returns decision metadata with every answer.

pub mod config;
mod coordinator;
pub mod queue;
pub mod server;

pub use config::GatewayConfig;
pub use coordinator::{
    CostSummary, Coordinator, PendingRequest, ProxyRequest, ProxyResponse, ResponseMetadata, SessionEntry,
};
