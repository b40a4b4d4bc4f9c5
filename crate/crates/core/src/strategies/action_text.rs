//! `Thought: ... Action: ```json {...}```` text protocol.

use serde_json::{json, Value};

use crate::env::{AgentAction, ToolCall};

pub const RESPOND: &str = "respond";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ActionParseError {
    #[error("no \"Action:\" marker")]
    NoAction,
    #[error("unterminated code fence after \"Action:\"")]
    UnterminatedFence,
    #[error("action is not a JSON object: {0}")]
    BadJson(String),
    #[error("action object needs a string \"name\"")]
    NoName,
    #[error("\"arguments\" must be an object")]
    BadArguments,
    #[error("respond action needs a string \"content\" argument")]
    NoContent,
}

/// Parses the `Action:` block of a reply.
///
/// The JSON may sit in a fenced block (optionally tagged `json`) or follow
/// the marker directly. Markers are tried from the last one backwards, so
/// the word may also appear in the thought or inside the message content.
pub fn parse_action(reply: &str) -> Result<AgentAction, ActionParseError> {
    let mut last_err = ActionParseError::NoAction;
    for (pos, marker) in reply.rmatch_indices("Action:") {
        match parse_after(&reply[pos + marker.len()..]) {
            Ok(action) => return Ok(action),
            Err(e) if last_err == ActionParseError::NoAction => last_err = e,
            Err(_) => {}
        }
    }
    Err(last_err)
}

fn parse_after(rest: &str) -> Result<AgentAction, ActionParseError> {
    let rest = rest.trim_start();
    let body = if let Some(fenced) = rest.strip_prefix("```") {
        let fenced = fenced.strip_prefix("json").unwrap_or(fenced);
        let end = fenced.find("```").ok_or(ActionParseError::UnterminatedFence)?;
        &fenced[..end]
    } else {
        rest
    };
    let value: Value = serde_json::from_str(body.trim()).map_err(|e| ActionParseError::BadJson(e.to_string()))?;
    let name = value
        .get("name")
        .and_then(Value::as_str)
        .ok_or(ActionParseError::NoName)?;
    let arguments = match value.get("arguments") {
        None | Some(Value::Null) => json!({}),
        Some(v @ Value::Object(_)) => v.clone(),
        Some(_) => return Err(ActionParseError::BadArguments),
    };
    if name == RESPOND {
        let content = arguments
            .get("content")
            .and_then(Value::as_str)
            .ok_or(ActionParseError::NoContent)?;
        return Ok(AgentAction::respond(content));
    }
    Ok(AgentAction::ToolCall(ToolCall::new(name, arguments)))
}

/// Renders a reply in the protocol `parse_action` accepts.
pub fn render_action(thought: &str, action: &AgentAction) -> String {
    let body = match action {
        AgentAction::Respond { text } => json!({"name": RESPOND, "arguments": {"content": text}}),
        AgentAction::ToolCall(call) => json!({"name": call.name, "arguments": call.arguments}),
    };
    format!("Thought: {thought}\nAction:\n```json\n{body}\n```")
}
