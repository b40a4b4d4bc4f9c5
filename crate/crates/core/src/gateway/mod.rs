//! Chat-completion abstraction shared by every agent and simulator.
//!
//! [`ChatProvider::complete`] is the single entry point. Implementations
//! supply [`ChatProvider::send`]; request and reply validation wrap it so
//! no provider can hand back a tool call the request did not declare.

pub mod http;
pub mod scripted;

use serde::{Deserialize, Serialize};

use crate::env::{ToolCall, ToolSpec};

pub use http::{HttpConfig, HttpProvider, ReqwestTransport, Transport, TransportError, TransportResponse};
pub use scripted::{make_scripted_provider, MatchRule, ProviderScript, Reply, ScriptEntry, ScriptMode, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    #[serde(default)]
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl ChatMessage {
    fn plain(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            tool_calls: None,
            tool_call_id: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::plain(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::plain(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::plain(Role::Assistant, content)
    }

    pub fn assistant_tool_calls(calls: Vec<ToolCall>) -> Self {
        Self {
            tool_calls: Some(calls),
            ..Self::plain(Role::Assistant, "")
        }
    }

    pub fn tool(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            tool_call_id: Some(call_id.into()),
            ..Self::plain(Role::Tool, content)
        }
    }

    pub fn calls(&self) -> &[ToolCall] {
        self.tool_calls.as_deref().unwrap_or_default()
    }

    /// Assistant message carrying both text and tool calls.
    pub fn is_mixed(&self) -> bool {
        self.role == Role::Assistant && !self.calls().is_empty() && !self.content.trim().is_empty()
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        if self.role == Role::Tool && self.tool_call_id.is_none() {
            return Err(GatewayError::InvalidRequest("tool message without tool_call_id".into()));
        }
        if self.role != Role::Assistant && !self.calls().is_empty() {
            return Err(GatewayError::InvalidRequest(format!(
                "{:?} message carries tool calls",
                self.role
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tools: Option<Vec<ToolSpec>>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

/// Sub-agents run greedy; only the main assistant's temperature is configurable.
pub const SUB_AGENT_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

impl CompletionRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model: model.into(),
            messages,
            tools: None,
            temperature: SUB_AGENT_TEMPERATURE,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn with_tools(mut self, tools: Vec<ToolSpec>) -> Self {
        self.tools = Some(tools);
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let first = self
            .messages
            .first()
            .ok_or_else(|| GatewayError::InvalidRequest("request has no messages".into()))?;
        if !matches!(first.role, Role::System | Role::User) {
            return Err(GatewayError::InvalidRequest(
                "first message must be system or user".into(),
            ));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        self.messages.iter().try_for_each(ChatMessage::check)
    }

    pub fn latest(&self, role: Role) -> Option<&ChatMessage> {
        self.messages.iter().rev().find(|m| m.role == role)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("provider failure (status {status:?}): {message}")]
    ProviderFailure { status: Option<u16>, message: String },
    #[error("script exhausted after {consumed} replies")]
    ScriptExhausted { consumed: usize },
    #[error("script entry {index} does not match the request (expected {expected})")]
    ScriptMismatch { index: usize, expected: String },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
}

/// Reply must be assistant-authored and only call declared tools with
/// schema-conforming arguments.
pub fn validate_reply(request: &CompletionRequest, reply: &ChatMessage) -> Result<(), GatewayError> {
    if reply.role != Role::Assistant {
        return Err(GatewayError::SchemaViolation(format!(
            "reply role is {:?}, expected assistant",
            reply.role
        )));
    }
    let declared = request.tools.as_deref().unwrap_or_default();
    for call in reply.calls() {
        let spec = declared
            .iter()
            .find(|t| t.name == call.name)
            .ok_or_else(|| GatewayError::SchemaViolation(format!("undeclared tool \"{}\"", call.name)))?;
        spec.validate_args(&call.arguments)
            .map_err(|e| GatewayError::SchemaViolation(format!("{}: {e}", call.name)))?;
    }
    Ok(())
}

pub trait ChatProvider: Send + Sync {
    /// Raw transport; callers go through [`ChatProvider::complete`].
    fn send(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError>;

    fn complete(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        request.validate()?;
        let reply = self.send(request)?;
        validate_reply(request, &reply)?;
        Ok(reply)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn send(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        (**self).send(request)
    }
}

/// Provider for roles a script leaves out; any call is a test failure.
#[derive(Debug, Default)]
pub struct UnscriptedProvider;

impl ChatProvider for UnscriptedProvider {
    fn send(&self, _: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        Err(GatewayError::ScriptExhausted { consumed: 0 })
    }
}
