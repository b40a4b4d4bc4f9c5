//! Assistant that speaks the `Thought:/Action:` text protocol.
//!
//! With [`PromptStyle::React`] this is the ReAct baseline. With
//! [`PromptStyle::Fact`] a would-be tool call that lacks required
//! arguments, or that precedes identity verification, is turned into a
//! follow-up question before it can reach the environment.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::action_text::{parse_action, render_action};
use super::{describe_tools, Decision, DomainContext, Strategy, StrategyConfig, StrategyContext, StrategyError, StrategyEvent, StrategyKind};
use crate::env::{AgentAction, ToolCall, ToolOutcome};
use crate::gateway::{ChatMessage, ChatProvider, CompletionRequest, GatewayError};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    React,
    Fact,
}

pub struct TextAgent {
    style: PromptStyle,
    ctx: StrategyContext,
    provider: Arc<dyn ChatProvider>,
    model: String,
    temperature: f64,
    identity_tool: Option<String>,
    identity_verified: bool,
}

enum Proposal {
    Act(AgentAction, String),
    FollowUp { intercepted: ToolCall, question: String, reason: String },
}

impl TextAgent {
    pub fn new(style: PromptStyle, domain: &DomainContext, provider: Arc<dyn ChatProvider>, config: &StrategyConfig) -> Self {
        let tools = describe_tools(&domain.tools);
        let system = match style {
            PromptStyle::React => prompts::REACT_SYSTEM.render(&[("policy", &domain.policy_doc), ("tools", &tools)]),
            PromptStyle::Fact => prompts::FACT_SYSTEM.render(&[
                ("policy", &domain.policy_doc),
                ("tools", &tools),
                ("handoff_tool", domain.tools.handoff_tool().unwrap_or("transfer_to_human")),
            ]),
        };
        Self {
            style,
            ctx: StrategyContext::new(domain, system),
            provider,
            model: config.model.clone(),
            temperature: config.temperature,
            identity_tool: domain.identity_tool.clone(),
            identity_verified: false,
        }
    }

    pub fn style(&self) -> PromptStyle {
        self.style
    }

    pub fn push_user(&mut self, content: impl Into<String>) {
        self.ctx.history.push(ChatMessage::user(content));
    }

    /// Checks a parsed call. `Ok(Some(..))` asks a follow-up question instead.
    fn screen(&self, call: &ToolCall) -> Result<Option<(String, String)>, String> {
        let registry = &self.ctx.tool_registry;
        let spec = registry
            .spec(&call.name)
            .ok_or_else(|| format!("unknown tool \"{}\"", call.name))?;
        if self.style == PromptStyle::Fact {
            let missing: Vec<&str> = spec
                .required_params()
                .filter(|p| !call.arguments.contains_key(&p.name))
                .map(|p| p.name.as_str())
                .collect();
            if !missing.is_empty() {
                let question = format!("To proceed, could you please provide your {}?", human_list(&missing));
                return Ok(Some((question, format!("missing required arguments: {}", missing.join(", ")))));
            }
        }
        spec.validate_args(&call.arguments).map_err(|e| format!("{}: {e}", call.name))?;
        if self.style == PromptStyle::Fact && !self.identity_verified {
            let exempt = registry.handoff_tool() == Some(call.name.as_str());
            if let Some(identity) = self.identity_tool.as_deref().filter(|id| *id != call.name && !exempt) {
                let needed: Vec<&str> = registry
                    .spec(identity)
                    .map(|s| s.required_params().map(|p| p.name.as_str()).collect())
                    .unwrap_or_default();
                let question = format!(
                    "Before I can help with that, I need to verify your identity. Could you please tell me your {}?",
                    human_list(&needed)
                );
                return Ok(Some((question, "user identity not verified".into())));
            }
        }
        Ok(None)
    }

    fn propose(&self) -> Result<(Proposal, Vec<StrategyEvent>), StrategyError> {
        let mut messages = self.ctx.history.clone();
        let mut events = Vec::new();
        let mut last_error = String::new();
        for attempt in 0..2 {
            let request = CompletionRequest::new(&self.model, messages.clone()).with_temperature(self.temperature);
            let reply = match self.provider.complete(&request) {
                Ok(r) => r,
                Err(GatewayError::SchemaViolation(e)) => {
                    last_error = e;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let outcome = parse_action(&reply.content).map_err(|e| e.to_string()).and_then(|action| match &action {
                AgentAction::ToolCall(call) => Ok(match self.screen(call)? {
                    Some((question, reason)) => Proposal::FollowUp {
                        intercepted: call.clone(),
                        question,
                        reason,
                    },
                    None => Proposal::Act(action, reply.content.clone()),
                }),
                AgentAction::Respond { .. } => Ok(Proposal::Act(action, reply.content.clone())),
            });
            match outcome {
                Ok(p) => return Ok((p, events)),
                Err(e) => {
                    last_error = e;
                    if attempt == 0 {
                        events.push(StrategyEvent::Repair { error: last_error.clone() });
                        messages.push(ChatMessage::assistant(reply.content));
                        messages.push(ChatMessage::user(prompts::ACTION_REPAIR.render(&[("error", &last_error)])));
                    }
                }
            }
        }
        Err(StrategyError::Invalid(format!("unusable action after one repair: {last_error}")))
    }
}

fn human_list(items: &[&str]) -> String {
    let items: Vec<String> = items.iter().map(|s| s.replace('_', " ")).collect();
    match items.as_slice() {
        [] => "details".into(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

impl Strategy for TextAgent {
    fn kind(&self) -> StrategyKind {
        match self.style {
            PromptStyle::React => StrategyKind::React,
            PromptStyle::Fact => StrategyKind::Fact,
        }
    }

    fn context(&self) -> &StrategyContext {
        &self.ctx
    }

    fn observe_greeting(&mut self, text: &str) {
        self.ctx.history.push(ChatMessage::assistant(render_action(
            "Greet the user.",
            &AgentAction::respond(text),
        )));
    }

    fn observe_user(&mut self, text: &str) -> Result<Vec<StrategyEvent>, StrategyError> {
        self.push_user(text);
        Ok(Vec::new())
    }

    fn observe_tool_result(&mut self, call: &ToolCall, outcome: &ToolOutcome) {
        if self.identity_tool.as_deref() == Some(call.name.as_str()) && !outcome.is_error() {
            self.identity_verified = true;
        }
        self.ctx.history.push(ChatMessage::user(format!("API output: {}", outcome.render())));
    }

    fn decide(&mut self) -> Result<Decision, StrategyError> {
        let (proposal, mut events) = self.propose()?;
        let action = match proposal {
            Proposal::Act(action, raw) => {
                self.ctx.history.push(ChatMessage::assistant(raw));
                action
            }
            Proposal::FollowUp {
                intercepted,
                question,
                reason,
            } => {
                let action = AgentAction::respond(question);
                self.ctx.history.push(ChatMessage::assistant(render_action(
                    &format!("I need more information before calling {}.", intercepted.name),
                    &action,
                )));
                events.push(StrategyEvent::FollowUp { intercepted, reason });
                action
            }
        };
        Ok(Decision { action, events })
    }
}
