//! Chat-completion backends and the prompt templates every agent step uses.
//!
//! [`ModelBackend`] is the single seam between the engine and a language
//! model. Two implementations ship with the crate: [`HttpBackend`] speaks the
//! common `/chat/completions` wire protocol, and [`ScriptedBackend`] answers
//! from an ordered rule list so whole pipelines can be replayed in tests.

mod http;
mod prompt;
mod scripted;

pub use http::{HttpBackend, HttpConfig};
pub use prompt::{render_prompt, PromptError, PromptSet, PromptTemplate, TemplateName};
pub use scripted::{Matcher, ScriptLoadError, ScriptRule, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// One request to a model: a system prompt plus the conversation so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system: String,
    pub messages: Vec<ChatMessage>,
    pub max_output_tokens: usize,
    pub temperature: f64,
}

impl ChatExchange {
    pub fn last_user_message(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.last_user_message().is_none() {
            return Err(BackendError::InvalidExchange(
                "exchange has no user message".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidExchange(format!(
                "temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("backend request timed out")]
    Timeout,
    #[error("malformed backend response: {0}")]
    InvalidResponse(String),
    #[error("invalid exchange: {0}")]
    InvalidExchange(String),
    #[error("no scripted rule matches message starting {0:?}")]
    NoMatchingRule(String),
}

impl BackendError {
    /// Transport failures, timeouts and 5xx statuses may succeed on retry;
    /// everything else is permanent.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::Timeout => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait ModelBackend: Send + Sync {
    fn complete(&self, exchange: &ChatExchange) -> Result<String, BackendError>;
}

impl<T: ModelBackend + ?Sized> ModelBackend for &T {
    fn complete(&self, exchange: &ChatExchange) -> Result<String, BackendError> {
        (**self).complete(exchange)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for std::sync::Arc<T> {
    fn complete(&self, exchange: &ChatExchange) -> Result<String, BackendError> {
        (**self).complete(exchange)
    }
}

impl<T: ModelBackend + ?Sized> ModelBackend for Box<T> {
    fn complete(&self, exchange: &ChatExchange) -> Result<String, BackendError> {
        (**self).complete(exchange)
    }
}
