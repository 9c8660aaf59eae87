//! Uniform access to chat-completion endpoints: retries with backoff, a
//! shared in-flight bound, and an optional record log.

mod backoff;
mod http;
mod message;
mod provider;
mod record;
mod scripted;

use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;
use tokio::sync::Semaphore;

pub use backoff::BackoffPolicy;
pub use http::{parse_completion_body, OpenAiCompatible};
pub use message::{
    duration_ms, ChatMessage, ChatRequest, ModelEndpoint, ProviderOutcome, Role, SamplingParams,
    Usage, MAX_RETRIES_LIMIT,
};
pub use provider::{ChatProvider, ProviderError, ProviderReply};
pub use record::{read_record_log, CallRecord, Recorder, ReplayProvider};
pub use scripted::{FailureKind, Matcher, Rule, Script, ScriptedProvider, Selection, Step};

pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint `{endpoint}` failed after {attempts} attempts: {last}")]
    Exhausted {
        endpoint: String,
        attempts: u32,
        #[source]
        last: ProviderError,
    },
    #[error("endpoint `{endpoint}`: {cause}")]
    Fatal {
        endpoint: String,
        #[source]
        cause: ProviderError,
    },
}

impl GatewayError {
    pub fn is_auth(&self) -> bool {
        matches!(
            self,
            GatewayError::Fatal {
                cause: ProviderError::Auth(_),
                ..
            }
        )
    }

    /// Failures that retrying later will not fix: bad credentials, malformed
    /// or rejected requests, script misses.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, GatewayError::Exhausted { .. })
    }
}

/// Builds the provider an endpoint asks for: scripted when it names a
/// script file, HTTP otherwise.
pub fn provider_for(endpoint: &ModelEndpoint) -> Result<Arc<dyn ChatProvider>, String> {
    match &endpoint.script {
        Some(path) => {
            let script = Script::load(path)?;
            Ok(Arc::new(ScriptedProvider::new(script)?))
        }
        None => Ok(Arc::new(
            OpenAiCompatible::new(endpoint).map_err(|e| e.to_string())?,
        )),
    }
}

#[derive(Clone)]
pub struct Gateway {
    endpoint: ModelEndpoint,
    provider: Arc<dyn ChatProvider>,
    limiter: Arc<Semaphore>,
    backoff: BackoffPolicy,
    recorder: Option<Arc<Recorder>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoint", &self.endpoint.name)
            .field("backoff", &self.backoff)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(endpoint: ModelEndpoint, provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            endpoint,
            provider,
            limiter: Arc::new(Semaphore::new(DEFAULT_CONCURRENCY)),
            backoff: BackoffPolicy::default(),
            recorder: None,
        }
    }

    /// Convenience for tests: an in-process scripted endpoint with no backoff.
    pub fn scripted(name: &str, provider: Arc<dyn ChatProvider>) -> Self {
        Self::new(ModelEndpoint::scripted(name), provider).with_backoff(BackoffPolicy::none())
    }

    /// Shares an in-flight bound with other gateways.
    pub fn with_limiter(mut self, limiter: Arc<Semaphore>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_backoff(mut self, backoff: BackoffPolicy) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn with_recorder(mut self, recorder: Arc<Recorder>) -> Self {
        self.recorder = Some(recorder);
        self
    }

    pub fn with_max_retries(mut self, n: u32) -> Self {
        self.endpoint.max_retries = n;
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn name(&self) -> &str {
        &self.endpoint.name
    }

    fn check(&self, messages: &[ChatMessage], params: &SamplingParams) -> Result<(), GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if let Some(i) = messages[1..].iter().position(|m| m.role == Role::System) {
            return Err(GatewayError::InvalidRequest(format!(
                "system message at position {} (only the first message may be system)",
                i + 1
            )));
        }
        if let Some(m) = messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(GatewayError::InvalidRequest(format!(
                "empty {:?} message",
                m.role
            )));
        }
        params.validate().map_err(GatewayError::InvalidRequest)
    }

    pub async fn complete_chat(
        &self,
        messages: &[ChatMessage],
        params: &SamplingParams,
    ) -> Result<ProviderOutcome, GatewayError> {
        self.check(messages, params)?;
        let request = ChatRequest {
            model: self.endpoint.model_id().to_string(),
            messages: messages.to_vec(),
            params: params.clone(),
        };
        let hash = request.hash();
        let max_attempts = self.endpoint.max_retries.min(MAX_RETRIES_LIMIT) + 1;
        let mut delay = Duration::ZERO;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            let result = {
                let _permit = self.limiter.acquire().await.expect("limiter never closed");
                if let Some(r) = &self.recorder {
                    r.enter();
                }
                let result = self.provider.send(&request).await;
                if let Some(r) = &self.recorder {
                    r.exit();
                }
                result
            };
            let measured = started.elapsed();
            match result {
                Ok(reply) => {
                    let latency = reply.latency.unwrap_or(measured);
                    self.log(
                        &request,
                        &hash,
                        Some(&reply.content),
                        None,
                        latency,
                        attempt,
                        reply.usage,
                    );
                    return Ok(ProviderOutcome {
                        content: reply.content,
                        usage: reply.usage,
                        latency,
                        attempt,
                    });
                }
                Err(err) => {
                    self.log(
                        &request,
                        &hash,
                        None,
                        Some(&err),
                        measured,
                        attempt,
                        Usage::default(),
                    );
                    if !err.is_retryable() {
                        return Err(GatewayError::Fatal {
                            endpoint: self.endpoint.name.clone(),
                            cause: err,
                        });
                    }
                    if attempt >= max_attempts {
                        return Err(GatewayError::Exhausted {
                            endpoint: self.endpoint.name.clone(),
                            attempts: attempt,
                            last: err,
                        });
                    }
                    delay = self
                        .backoff
                        .next_delay(attempt - 1, delay, &mut rand::thread_rng());
                    tracing::debug!(endpoint = %self.endpoint.name, attempt, ?delay, "retrying: {err}");
                    if !delay.is_zero() {
                        tokio::time::sleep(delay).await;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn log(
        &self,
        request: &ChatRequest,
        hash: &str,
        reply: Option<&str>,
        error: Option<&ProviderError>,
        latency: Duration,
        attempt: u32,
        usage: Usage,
    ) {
        if let Some(r) = &self.recorder {
            r.record(CallRecord {
                request_hash: hash.to_string(),
                endpoint: self.endpoint.name.clone(),
                model: request.model.clone(),
                messages: request.messages.clone(),
                params: request.params.clone(),
                reply: reply.map(str::to_string),
                error: error.map(|e| e.to_string()),
                latency_ms: latency.as_millis() as u64,
                attempt,
                usage,
            });
        }
    }
}
