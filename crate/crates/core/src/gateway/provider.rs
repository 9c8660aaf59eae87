use std::time::Duration;

use async_trait::async_trait;
use thiserror::Error;

use super::{ChatRequest, Usage};

/// Failure of a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("script miss: {0}")]
    ScriptMiss(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transient(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub content: String,
    pub usage: Usage,
    /// Latency reported by the provider itself. Scripted and replayed
    /// providers report one so transcripts stay reproducible; live
    /// transports leave it `None` and the gateway measures wall time.
    pub latency: Option<Duration>,
}

impl ProviderReply {
    pub fn text(content: impl Into<String>) -> Self {
        Self {
            content: content.into(),
            usage: Usage::default(),
            latency: None,
        }
    }
}

/// One attempt at a chat completion. Retrying, rate limiting and recording
/// live in [`super::Gateway`].
#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError>;
}
