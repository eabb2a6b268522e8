//! Scriptable in-process backend for tests and offline runs.
//!
//! A [`MockScript`] maps request digests to canned replies, can synthesize
//! replies from planted markers in the text, and can inject faults at exact
//! call indices — which is how crash/retry behaviour is exercised without a
//! network.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::wire::{message_hash, ChatRequest, ChatResponse, Usage};
use super::{Backend, GatewayError};
use crate::chunker::estimate_tokens;

/// Declarative behaviour of a [`MockBackend`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    /// Canned replies keyed by [`message_hash`] of the request messages.
    #[serde(default)]
    pub responses: HashMap<String, String>,
    /// Fallback when no canned reply matches.
    #[serde(default)]
    pub generator: Option<Generator>,
    /// Faults injected at 1-based global call indices.
    #[serde(default)]
    pub faults: Vec<Fault>,
    /// When true, replies carry provider-style token usage.
    #[serde(default = "default_true")]
    pub report_usage: bool,
}

fn default_true() -> bool {
    true
}

impl Default for MockScript {
    fn default() -> Self {
        Self {
            responses: HashMap::new(),
            generator: None,
            faults: Vec::new(),
            report_usage: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Reply with the rest of the line following `marker` in the last user
    /// message. Lets corpus fixtures carry their own expected answers.
    EchoPlanted { marker: String },
    /// Always reply with the same content.
    Fixed { content: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fault {
    /// 1-based index into the global sequence of calls.
    pub call: u64,
    pub error: FaultKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    RateLimited,
    Timeout,
    Network,
    ServerError { status: u16 },
    AuthFailed,
    ContextLengthExceeded,
    MalformedResponse,
}

impl FaultKind {
    fn to_error(&self) -> GatewayError {
        match self {
            FaultKind::RateLimited => GatewayError::RateLimited { retry_after: None },
            FaultKind::Timeout => GatewayError::Timeout {
                detail: "scripted timeout".to_string(),
            },
            FaultKind::Network => GatewayError::Network {
                detail: "scripted network failure".to_string(),
            },
            FaultKind::ServerError { status } => GatewayError::ServerError {
                status: *status,
                detail: "scripted server error".to_string(),
            },
            FaultKind::AuthFailed => GatewayError::AuthFailed {
                detail: "scripted auth failure".to_string(),
            },
            FaultKind::ContextLengthExceeded => GatewayError::ContextLengthExceeded {
                detail: "scripted context overflow".to_string(),
            },
            FaultKind::MalformedResponse => GatewayError::MalformedResponse {
                detail: "scripted malformed body".to_string(),
            },
        }
    }
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let raw = std::fs::read_to_string(path).map_err(|e| GatewayError::Network {
            detail: format!("cannot read mock script {}: {e}", path.display()),
        })?;
        serde_json::from_str(&raw).map_err(|e| GatewayError::MalformedResponse {
            detail: format!("invalid mock script {}: {e}", path.display()),
        })
    }
}

/// Thread-safe scripted backend; clones share call counts and logs.
#[derive(Debug, Clone)]
pub struct MockBackend {
    inner: Arc<MockInner>,
}

#[derive(Debug)]
struct MockInner {
    script: MockScript,
    calls: AtomicU64,
    log: Mutex<Vec<ChatRequest>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self {
            inner: Arc::new(MockInner {
                script,
                calls: AtomicU64::new(0),
                log: Mutex::new(Vec::new()),
            }),
        }
    }

    /// Total calls made, including faulted ones.
    pub fn request_count(&self) -> u64 {
        self.inner.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.inner.log.lock().unwrap().clone()
    }

    fn reply_content(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let hash = message_hash(&request.messages);
        if let Some(content) = self.inner.script.responses.get(&hash) {
            return Ok(content.clone());
        }
        match &self.inner.script.generator {
            Some(Generator::Fixed { content }) => Ok(content.clone()),
            Some(Generator::EchoPlanted { marker }) => {
                let text = request
                    .messages
                    .iter()
                    .rev()
                    .map(|m| m.content.as_str())
                    .find(|c| c.contains(marker.as_str()))
                    .ok_or_else(|| GatewayError::Api {
                        status: 0,
                        detail: format!("mock: marker {marker:?} not found in request"),
                    })?;
                let after = &text[text.find(marker.as_str()).unwrap() + marker.len()..];
                let line = after.lines().next().unwrap_or("");
                Ok(line.trim().trim_end_matches('\'').trim().to_string())
            }
            None => Err(GatewayError::Api {
                status: 0,
                detail: format!("mock: no scripted response for hash {hash}"),
            }),
        }
    }
}

impl Backend for MockBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let call = self.inner.calls.fetch_add(1, Ordering::SeqCst) + 1;
        self.inner.log.lock().unwrap().push(request.clone());

        if let Some(fault) = self.inner.script.faults.iter().find(|f| f.call == call) {
            return Err(fault.error.to_error());
        }

        let content = self.reply_content(request)?;
        let usage = self.inner.script.report_usage.then(|| Usage {
            prompt_tokens: request
                .messages
                .iter()
                .map(|m| estimate_tokens(&m.content))
                .sum(),
            completion_tokens: estimate_tokens(&content),
        });
        Ok(ChatResponse { content, usage })
    }
}
