//! Blocking HTTP backend for OpenAI-compatible chat-completions endpoints.

use std::fmt;
use std::time::Duration;

use super::wire::{ApiResponseBody, ChatRequest, ChatResponse};
use super::{Backend, GatewayError};

/// Posts requests with bearer authentication and classifies failures into
/// retryable and fatal [`GatewayError`]s.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Network {
                detail: format!("failed to build http client: {e}"),
            })?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
        })
    }
}

// The key must never leak through debug logging.
impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

impl Backend for HttpBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(request)
            .send()
            .map_err(classify_transport)?;

        let status = response.status().as_u16();
        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse::<u64>().ok())
            .map(Duration::from_secs);
        let body = response.text().map_err(|e| GatewayError::Network {
            detail: format!("failed to read response body: {e}"),
        })?;

        if (200..300).contains(&status) {
            let parsed: ApiResponseBody =
                serde_json::from_str(&body).map_err(|e| GatewayError::MalformedResponse {
                    detail: format!("unparseable success body: {e}"),
                })?;
            if parsed.choices.is_empty() {
                return Err(GatewayError::MalformedResponse {
                    detail: "success body has no choices".to_string(),
                });
            }
            return Ok(parsed.into_response());
        }

        Err(classify_status(status, &body, retry_after))
    }
}

fn classify_transport(error: reqwest::Error) -> GatewayError {
    if error.is_timeout() {
        GatewayError::Timeout {
            detail: error.to_string(),
        }
    } else {
        GatewayError::Network {
            detail: error.to_string(),
        }
    }
}

/// Map a non-2xx status to the error taxonomy. A 400 whose body carries the
/// provider's `context_length_exceeded` code is fatal for this request but
/// must not poison the run.
pub fn classify_status(status: u16, body: &str, retry_after: Option<Duration>) -> GatewayError {
    let detail = excerpt(body);
    match status {
        401 | 403 => GatewayError::AuthFailed { detail },
        429 => GatewayError::RateLimited { retry_after },
        408 => GatewayError::Timeout { detail },
        500..=599 => GatewayError::ServerError { status, detail },
        400 if has_error_code(body, "context_length_exceeded") => {
            GatewayError::ContextLengthExceeded { detail }
        }
        _ => GatewayError::Api { status, detail },
    }
}

fn has_error_code(body: &str, code: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            v.get("error")?
                .get("code")
                .map(|c| c.as_str() == Some(code))
        })
        .unwrap_or_else(|| body.contains(code))
}

fn excerpt(body: &str) -> String {
    const LIMIT: usize = 200;
    if body.len() <= LIMIT {
        body.to_string()
    } else {
        let mut end = LIMIT;
        while !body.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}...", &body[..end])
    }
}
