//! JSON wire types for the chat-completions protocol.
//!
//! [`ChatRequest`] is the exact body posted to the endpoint;
//! [`ApiResponseBody`] mirrors the provider's reply and normalizes into the
//! backend-agnostic [`ChatResponse`]. [`message_hash`] gives a stable digest
//! of a message list, used to key scripted responses in tests.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Request body for a chat completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u64>,
    pub messages: Vec<Message>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

/// A normalized completion: concatenated message content plus token counts
/// when the provider reported them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Usage {
    pub fn total(self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl std::ops::Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

/// Provider-side response body: `choices[].message.content` plus optional
/// usage accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiResponseBody {
    pub choices: Vec<ApiChoice>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiChoice {
    pub message: Message,
}

impl ApiResponseBody {
    /// Concatenate all choice contents into one normalized response.
    pub fn into_response(self) -> ChatResponse {
        ChatResponse {
            content: self
                .choices
                .into_iter()
                .map(|c| c.message.content)
                .collect::<Vec<_>>()
                .concat(),
            usage: self.usage,
        }
    }
}

/// Hex SHA-256 over the message list: count, then each message's role and
/// length-prefixed content. Length prefixes keep adjacent contents from
/// colliding under concatenation.
pub fn message_hash(messages: &[Message]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((messages.len() as u64).to_le_bytes());
    for message in messages {
        let role = message.role.as_str().as_bytes();
        hasher.update((role.len() as u64).to_le_bytes());
        hasher.update(role);
        hasher.update((message.content.len() as u64).to_le_bytes());
        hasher.update(message.content.as_bytes());
    }
    hex::encode(hasher.finalize())
}
