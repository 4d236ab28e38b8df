//! Prompt rendering and chat-completion backends.

mod prompts;
mod remote;
mod scripted;

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use prompts::{
    encode_catalog, encode_history, encode_inventory, encode_task_library, encode_task_names, extract_history_block,
    extract_user_instruction, parse_history, render_user_embedding, PromptError, PromptKind, PromptSet, PromptTemplate,
    INSTRUCTION_BEGIN, INSTRUCTION_END,
};
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{RuleMatcher, ScriptError, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Result<Self, LlmError> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(LlmError::EmptyMessage);
        }
        Ok(Self { role, content })
    }

    pub fn system(content: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Result<Self, LlmError> {
        Self::new(ChatRole::User, content)
    }
}

/// One completion request. `prompt` names the template that produced it so
/// scripted backends can key rules on it; remote backends ignore it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub prompt: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            prompt: prompt.into(),
            messages,
        }
    }

    /// All message contents joined by blank lines.
    pub fn full_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("prompt rendering failed: {0}")]
    Prompt(String),
    #[error("request has no messages")]
    EmptyRequest,
    #[error("chat message content must not be empty")]
    EmptyMessage,
    #[error("completion timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("transport failure after {attempts} attempt(s): {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    MalformedPayload(String),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Wraps a backend and counts every completion attempt made through it.
#[derive(Debug, Default)]
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// Counts calls and failures through a borrowed backend and keeps the last
/// error, so a caller can tell a total outage from partial failures.
pub struct TallyBackend<'a> {
    inner: &'a dyn ChatBackend,
    calls: AtomicUsize,
    failures: AtomicUsize,
    last_error: std::sync::Mutex<Option<LlmError>>,
}

impl<'a> TallyBackend<'a> {
    pub fn new(inner: &'a dyn ChatBackend) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
            last_error: std::sync::Mutex::new(None),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn failures(&self) -> usize {
        self.failures.load(Ordering::SeqCst)
    }

    /// The last error, if at least one call was made and every call failed.
    pub fn total_outage(&self) -> Option<LlmError> {
        let calls = self.calls();
        if calls > 0 && self.failures() == calls {
            self.last_error.lock().expect("tally poisoned").clone()
        } else {
            None
        }
    }
}

impl ChatBackend for TallyBackend<'_> {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let out = self.inner.complete(request);
        if let Err(e) = &out {
            self.failures.fetch_add(1, Ordering::SeqCst);
            *self.last_error.lock().expect("tally poisoned") = Some(e.clone());
        }
        out
    }
}

/// A backend paired with the templates used to address it.
#[derive(Clone, Copy)]
pub struct Llm<'a> {
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptSet,
}

impl<'a> Llm<'a> {
    pub fn new(backend: &'a dyn ChatBackend, prompts: &'a PromptSet) -> Self {
        Self { backend, prompts }
    }

    /// Builds the request for `kind`: the rendered template as the system
    /// message and `parts` joined by blank lines as the user message.
    pub fn request(
        &self,
        kind: PromptKind,
        bindings: &[(&'static str, String)],
        parts: &[String],
    ) -> Result<ChatRequest, LlmError> {
        let system = self
            .prompts
            .render(kind, bindings)
            .map_err(|e| LlmError::Prompt(e.to_string()))?;
        let mut messages = vec![ChatMessage::system(system)?];
        let user = parts.join("\n\n");
        if !user.trim().is_empty() {
            messages.push(ChatMessage::user(user)?);
        }
        Ok(ChatRequest::new(kind.name(), messages))
    }

    pub fn ask(
        &self,
        kind: PromptKind,
        bindings: &[(&'static str, String)],
        parts: &[String],
    ) -> Result<String, LlmError> {
        let request = self.request(kind, bindings, parts)?;
        let out = self.backend.complete(&request);
        match &out {
            Ok(text) => tracing::debug!(prompt = kind.name(), completion = %text, "llm call"),
            Err(e) => tracing::warn!(prompt = kind.name(), error = %e, "llm call failed"),
        }
        out
    }
}

/// A backend that is always down. Useful for outage paths.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineBackend;

impl ChatBackend for OfflineBackend {
    fn complete(&self, _request: &ChatRequest) -> Result<String, LlmError> {
        Err(LlmError::Transport {
            attempts: 1,
            detail: "backend offline".into(),
        })
    }
}

/// Strict True/False parsing for condition prompts.
///
/// Surrounding whitespace, quotes and a trailing period are tolerated;
/// anything else yields `None` and the caller picks the conservative branch.
pub fn parse_bool_answer(raw: &str) -> Option<bool> {
    let t = raw
        .trim()
        .trim_matches(|c: char| c == '"' || c == '\'' || c == '`')
        .trim_end_matches('.')
        .trim();
    if t.eq_ignore_ascii_case("true") {
        Some(true)
    } else if t.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bool_answers() {
        assert_eq!(parse_bool_answer("True"), Some(true));
        assert_eq!(parse_bool_answer(" false.\n"), Some(false));
        assert_eq!(parse_bool_answer("'TRUE'"), Some(true));
        assert_eq!(parse_bool_answer("True, because"), None);
        assert_eq!(parse_bool_answer("maybe"), None);
        assert_eq!(parse_bool_answer(""), None);
    }

    #[test]
    fn empty_messages_rejected() {
        assert_eq!(ChatMessage::user("  "), Err(LlmError::EmptyMessage));
    }

    #[test]
    fn counting_wrapper_counts_failures_too() {
        let b = CountingBackend::new(OfflineBackend);
        let req = ChatRequest::new("x", vec![ChatMessage::user("hi").unwrap()]);
        assert!(b.complete(&req).is_err());
        assert!(b.complete(&req).is_err());
        assert_eq!(b.calls(), 2);
    }
}
