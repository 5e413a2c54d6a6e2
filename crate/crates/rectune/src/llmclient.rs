//! Minimal provider-agnostic chat-completion client.
//!
//! The optional LLM backends of the actor and critic speak a generic JSON
//! protocol over HTTP: `{model, messages, temperature, max_tokens}` in,
//! `{text, finish_reason?, usage?}` out (an OpenAI-style
//! `choices[0].message.content` body is also accepted). Transport failures and
//! 5xx responses retry with exponential backoff; 4xx never retries.
//! Credentials never appear in logs or error messages.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("authentication rejected by endpoint (status {0})")]
    Auth(u16),
    #[error("endpoint returned client error status {0}")]
    ClientError(u16),
    #[error("transport failed after {attempts} attempts: {message}")]
    TransportExhausted { attempts: u32, message: String },
    #[error("malformed response body: {0}")]
    MalformedResponse(String),
    #[error("no JSON array found in model output")]
    NoArray,
    #[error("candidate {index} violates the schema: {message}")]
    BadCandidate { index: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("at least one message required".into()));
        }
        if self.messages[0].role == Role::Assistant {
            return Err(LlmError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
}

/// Endpoint configuration; the API key comes from the environment, never from
/// files that end up in memory directories.
#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(30),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }

    /// Reads `RECTUNE_LLM_URL`, `RECTUNE_LLM_API_KEY`, `RECTUNE_LLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("RECTUNE_LLM_URL").ok()?;
        let model = std::env::var("RECTUNE_LLM_MODEL").unwrap_or_else(|_| "default".into());
        let mut cfg = Self::new(url, model);
        cfg.api_key = std::env::var("RECTUNE_LLM_API_KEY").ok();
        Some(cfg)
    }
}

fn parse_body(body: &str) -> Result<ChatResponse, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
    if let Some(text) = value.get("text").and_then(|t| t.as_str()) {
        return Ok(ChatResponse {
            text: text.to_string(),
            finish_reason: value
                .get("finish_reason")
                .and_then(|f| f.as_str())
                .map(String::from),
            usage: value
                .get("usage")
                .and_then(|u| serde_json::from_value(u.clone()).ok()),
        });
    }
    if let Some(content) = value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
    {
        return Ok(ChatResponse {
            text: content.to_string(),
            finish_reason: value
                .pointer("/choices/0/finish_reason")
                .and_then(|f| f.as_str())
                .map(String::from),
            usage: None,
        });
    }
    Err(LlmError::MalformedResponse(
        "neither `text` nor `choices[0].message.content` present".into(),
    ))
}

/// One chat completion with retries. 5xx and transport errors retry up to
/// `max_retries` with exponential backoff plus jitter; 4xx fails immediately.
pub fn complete(request: &ChatRequest, endpoint: &EndpointConfig) -> Result<ChatResponse, LlmError> {
    request.validate()?;
    let body = serde_json::to_string(request).expect("chat request serializes");
    let attempts = endpoint.max_retries + 1;
    let mut last_message = String::new();

    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = endpoint.backoff_base * (1 << (attempt - 1));
            let jitter_ns = (std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.subsec_nanos())
                .unwrap_or(0)
                % 100_000_000) as u64;
            std::thread::sleep(backoff + Duration::from_nanos(jitter_ns));
        }
        let mut req = ureq::post(&endpoint.url)
            .timeout(endpoint.timeout)
            .set("content-type", "application/json");
        if let Some(key) = &endpoint.api_key {
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        match req.send_string(&body) {
            Ok(resp) => {
                let text = resp
                    .into_string()
                    .map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
                return parse_body(&text);
            }
            Err(ureq::Error::Status(code, _)) if code == 401 || code == 403 => {
                return Err(LlmError::Auth(code));
            }
            Err(ureq::Error::Status(code, _)) if (400..500).contains(&code) => {
                return Err(LlmError::ClientError(code));
            }
            Err(ureq::Error::Status(code, _)) => {
                last_message = format!("server status {code}");
            }
            Err(ureq::Error::Transport(t)) => {
                // transport errors may embed the URL; keep only the kind so a
                // credential-bearing URL never leaks into logs
                last_message = format!("transport: {:?}", t.kind());
            }
        }
    }
    Err(LlmError::TransportExhausted {
        attempts,
        message: last_message,
    })
}

/// One element of the actor's demanded output schema.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct CandidateJson {
    pub config: BTreeMap<String, f64>,
    pub explanation: String,
}

/// Finds the first well-formed JSON array in free-form model output (fenced or
/// bare) and validates each element against the candidate schema. Invalid
/// elements are tolerated and reported alongside the valid ones.
pub fn extract_json_array(text: &str) -> Result<(Vec<CandidateJson>, Vec<(usize, String)>), LlmError> {
    let bytes = text.as_bytes();
    let mut search_from = 0;
    while let Some(rel) = text[search_from..].find('[') {
        let start = search_from + rel;
        if let Some(end) = matching_bracket(bytes, start) {
            if let Ok(values) =
                serde_json::from_str::<Vec<serde_json::Value>>(&text[start..=end])
            {
                let mut valid = Vec::new();
                let mut rejected = Vec::new();
                for (i, v) in values.into_iter().enumerate() {
                    match serde_json::from_value::<CandidateJson>(v) {
                        Ok(c) if !c.explanation.trim().is_empty() => valid.push(c),
                        Ok(_) => rejected.push((i, "empty explanation".to_string())),
                        Err(e) => rejected.push((i, e.to_string())),
                    }
                }
                if valid.is_empty() {
                    if let Some((index, message)) = rejected.into_iter().next() {
                        return Err(LlmError::BadCandidate { index, message });
                    }
                    return Err(LlmError::NoArray);
                }
                return Ok((valid, rejected));
            }
        }
        search_from = start + 1;
    }
    Err(LlmError::NoArray)
}

/// Index of the bracket matching `bytes[start] == b'['`, honoring strings and
/// escapes.
fn matching_bracket(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0i64;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' => depth += 1,
            b']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
