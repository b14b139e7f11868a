//! The chat-generation boundary shared by the agent and the synthetic user.
//!
//! Messages are expressed from the caller's perspective (`Self_` is the
//! participant being generated, `Other` its counterpart), so a single backend
//! can voice either side of the conversation.

mod http;
mod mock;
mod retry;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpChatBackend;
pub use mock::MockBackend;
pub use retry::{RetryPolicy, Retrying};

pub const API_KEY_ENV: &str = "CONVOBENCH_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    #[serde(rename = "self")]
    Self_,
    Other,
}

impl ChatRole {
    /// Wire role from the generating participant's point of view.
    pub fn wire_role(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::Self_ => "assistant",
            ChatRole::Other => "user",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::System,
            content: content.into(),
        }
    }

    pub fn own(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Self_,
            content: content.into(),
        }
    }

    pub fn other(content: impl Into<String>) -> Self {
        Self {
            role: ChatRole::Other,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationParams {
    pub model: String,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            model: "gpt-4o".into(),
            temperature: 0.2,
            seed: None,
            max_tokens: 1024,
            timeout: Duration::from_secs(60),
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.model.trim().is_empty() {
            return Err(BackendError::InvalidRequest("empty model id".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("empty completion")]
    EmptyCompletion,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("mock backend has no queued responses")]
    Exhausted,
}

impl BackendError {
    /// Rate limits, timeouts, transport failures and 5xx responses.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Timeout | BackendError::RateLimited | BackendError::Transport(_) => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// Stateless chat completion: all context travels in `messages`.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        (**self).complete(messages, params)
    }
}

pub(crate) fn check_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    match messages.first() {
        None => return Err(BackendError::InvalidRequest("no messages".into())),
        Some(m) if m.role != ChatRole::System => {
            return Err(BackendError::InvalidRequest(
                "first message must be the system prompt".into(),
            ))
        }
        _ => {}
    }
    if messages[1..].iter().any(|m| m.content.is_empty()) {
        return Err(BackendError::InvalidRequest("empty conversation message".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transient_classification() {
        assert!(BackendError::RateLimited.is_transient());
        assert!(BackendError::Timeout.is_transient());
        assert!(BackendError::Status { status: 503, body: String::new() }.is_transient());
        assert!(!BackendError::Status { status: 400, body: String::new() }.is_transient());
        assert!(!BackendError::InvalidRequest("x".into()).is_transient());
        assert!(!BackendError::EmptyCompletion.is_transient());
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        let hot = GenerationParams {
            temperature: 2.5,
            ..Default::default()
        };
        assert!(hot.validate().is_err());
    }

    #[test]
    fn messages_must_start_with_system() {
        assert!(check_messages(&[]).is_err());
        assert!(check_messages(&[ChatMessage::other("hi")]).is_err());
        assert!(check_messages(&[ChatMessage::system("s"), ChatMessage::other("")]).is_err());
        assert!(check_messages(&[ChatMessage::system("s"), ChatMessage::other("hi")]).is_ok());
    }
}
