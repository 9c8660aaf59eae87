//! Chat-completions transport over HTTP.

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{
    ChatMessage, ChatProvider, ChatRequest, ModelEndpoint, ProviderError, ProviderReply, Usage,
};

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct OpenAiCompatible {
    client: reqwest::Client,
    url: String,
    credential_ref: Option<String>,
}

impl OpenAiCompatible {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(endpoint.request_timeout())
            .build()
            .map_err(|e| ProviderError::Rejected(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            url: format!(
                "{}/chat/completions",
                endpoint.base_url.trim_end_matches('/')
            ),
            credential_ref: endpoint.credential_ref.clone(),
        })
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.credential_ref {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                ProviderError::Auth(format!("environment variable `{var}` is not set"))
            }),
        }
    }
}

fn classify_status(status: StatusCode, body: &str) -> ProviderError {
    let snippet: String = body.chars().take(300).collect();
    let msg = format!("HTTP {status}: {snippet}");
    match status.as_u16() {
        401 | 403 => ProviderError::Auth(msg),
        408 | 409 | 425 | 429 => ProviderError::Transient(msg),
        s if s >= 500 => ProviderError::Transient(msg),
        _ => ProviderError::Rejected(msg),
    }
}

/// Extracts the assistant text of the first choice from a response body.
pub fn parse_completion_body(body: &str) -> Result<(String, Usage), ProviderError> {
    let parsed: WireResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::Malformed(e.to_string()))?;
    let first = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ProviderError::Malformed("response has no choices".into()))?;
    let content = first
        .message
        .content
        .ok_or_else(|| ProviderError::Malformed("first choice has no content".into()))?;
    Ok((content, parsed.usage.unwrap_or_default()))
}

#[async_trait]
impl ChatProvider for OpenAiCompatible {
    async fn send(&self, request: &ChatRequest) -> Result<ProviderReply, ProviderError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_output_tokens,
            seed: request.params.seed,
        };
        let mut builder = self.client.post(&self.url).json(&body);
        if let Some(key) = self.api_key()? {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if !status.is_success() {
            return Err(classify_status(status, &text));
        }
        let (content, usage) = parse_completion_body(&text)?;
        Ok(ProviderReply {
            content,
            usage,
            latency: None,
        })
    }
}
