//! OpenAI-compatible chat-completions transport.

use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TransportError {
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("network error: {0}")]
    Network(String),
    #[error("malformed response: {0}")]
    Protocol(String),
}

impl TransportError {
    /// Server errors, rate limiting, timeouts and connection failures are
    /// worth retrying; other client errors and malformed bodies are not.
    pub fn is_retryable(&self) -> bool {
        match self {
            Self::Status { status, .. } => *status >= 500 || *status == 429 || *status == 408,
            Self::Timeout | Self::Network(_) => true,
            Self::Protocol(_) => false,
        }
    }
}

impl From<ureq::Error> for TransportError {
    fn from(e: ureq::Error) -> Self {
        match e {
            ureq::Error::StatusCode(status) => Self::Status {
                status,
                body: String::new(),
            },
            ureq::Error::Timeout(_) => Self::Timeout,
            ureq::Error::Json(e) => Self::Protocol(e.to_string()),
            other => Self::Network(other.to_string()),
        }
    }
}

/// One user turn with a text prompt and a single PNG image.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub prompt: String,
    pub image_png: Vec<u8>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn to_wire(&self) -> Value {
        let data_url = format!(
            "data:image/png;base64,{}",
            base64::engine::general_purpose::STANDARD.encode(&self.image_png)
        );
        json!({
            "model": self.model,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": self.prompt},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

/// Sends chat requests and returns the assistant's text.
pub trait VlmTransport: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, TransportError>;
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<Value>,
}

/// Extracts `choices[0].message.content`, accepting either a string or an
/// array of `{type: "text", text}` parts.
pub fn parse_completion(body: &str) -> Result<String, TransportError> {
    let resp: CompletionResponse =
        serde_json::from_str(body).map_err(|e| TransportError::Protocol(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| TransportError::Protocol("response has no choices".into()))?;
    match choice.message.content {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s),
        Some(Value::Array(parts)) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        Some(other) => Err(TransportError::Protocol(format!(
            "unexpected content type: {other}"
        ))),
    }
}

pub(crate) fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs `body` as JSON and returns the response text for 2xx statuses.
pub(crate) fn post_json(
    agent: &ureq::Agent,
    url: &str,
    api_key: Option<&str>,
    body: &Value,
) -> Result<String, TransportError> {
    let mut req = agent.post(url);
    if let Some(key) = api_key {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req.send_json(body)?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_string()?;
    if !(200..300).contains(&status) {
        return Err(TransportError::Status { status, body: text });
    }
    Ok(text)
}

pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// `endpoint` is the server base URL; `/v1/chat/completions` is appended.
    pub fn new(endpoint: &str, api_key: Option<String>, timeout: Duration) -> Self {
        Self {
            agent: http_agent(timeout),
            url: format!("{}/v1/chat/completions", endpoint.trim_end_matches('/')),
            api_key,
        }
    }
}

impl VlmTransport for HttpTransport {
    fn chat(&self, request: &ChatRequest) -> Result<String, TransportError> {
        let body = post_json(&self.agent, &self.url, self.api_key.as_deref(), &request.to_wire())?;
        parse_completion(&body)
    }
}
