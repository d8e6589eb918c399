//! Blocking chat-completion client.
//!
//! Requests go through a content-addressed response cache first; misses are
//! sent to a chat-completions style HTTP endpoint with exponential backoff on
//! transient failures and a shared token-bucket rate limiter.

mod cache;
mod client;
mod limiter;
mod request;
mod transport;

pub use cache::{CacheEntry, ResponseCache};
pub use client::{ChatClient, ClientConfig, Completion, RetryPolicy, UsageSummary};
pub use limiter::RateLimiter;
pub use request::{ChatMessage, ChatRequest, RequestKey, Role, TokenUsage};
pub use transport::{CannedTransport, HttpTransport, RawResponse, Transport, TransportError};

pub const ENV_ENDPOINT: &str = "AGORA_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "AGORA_LLM_API_KEY";
pub const ENV_MODEL: &str = "AGORA_LLM_MODEL";

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("llm client not configured: {0}")]
    NotConfigured(String),
    #[error("authentication rejected (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("malformed service response: {0}")]
    Malformed(String),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}
