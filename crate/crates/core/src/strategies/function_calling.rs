//! Native function-calling assistant: tools travel in the request and
//! come back as structured `tool_calls`.

use std::sync::Arc;

use super::{Decision, DomainContext, Strategy, StrategyConfig, StrategyContext, StrategyError, StrategyEvent, StrategyKind};
use crate::env::{AgentAction, ToolCall, ToolOutcome};
use crate::gateway::{ChatMessage, ChatProvider, CompletionRequest, GatewayError};
use crate::prompts;

pub struct FunctionCallingAgent {
    ctx: StrategyContext,
    provider: Arc<dyn ChatProvider>,
    model: String,
    temperature: f64,
    issued_calls: usize,
}

impl FunctionCallingAgent {
    pub fn new(domain: &DomainContext, provider: Arc<dyn ChatProvider>, config: &StrategyConfig) -> Self {
        let system = prompts::FC_SYSTEM.render(&[("policy", &domain.policy_doc)]);
        Self {
            ctx: StrategyContext::new(domain, system),
            provider,
            model: config.model.clone(),
            temperature: config.temperature,
            issued_calls: 0,
        }
    }

    pub(crate) fn history_mut(&mut self) -> &mut Vec<ChatMessage> {
        &mut self.ctx.history
    }

    /// Asks for the next action without recording it. `extra` messages are
    /// appended to the request only.
    pub(crate) fn propose(
        &mut self,
        extra: &[ChatMessage],
    ) -> Result<(AgentAction, ChatMessage, Vec<StrategyEvent>), StrategyError> {
        let mut messages = self.ctx.history.clone();
        messages.extend_from_slice(extra);
        let mut events = Vec::new();
        let mut last_error = String::new();
        for attempt in 0..2 {
            let request = CompletionRequest::new(&self.model, messages.clone())
                .with_tools(self.ctx.tool_registry.specs().to_vec())
                .with_temperature(self.temperature);
            let error = match self.provider.complete(&request) {
                Ok(reply) => match reply.calls().first() {
                    Some(first) => {
                        let mut call = first.clone();
                        if call.id.is_empty() {
                            call.id = format!("call_{}", self.issued_calls);
                        }
                        self.issued_calls += 1;
                        let recorded = ChatMessage {
                            tool_calls: Some(vec![call.clone()]),
                            ..reply
                        };
                        return Ok((AgentAction::ToolCall(call), recorded, events));
                    }
                    None if !reply.content.trim().is_empty() => {
                        let action = AgentAction::respond(reply.content.clone());
                        return Ok((action, reply, events));
                    }
                    None => "empty reply".to_string(),
                },
                Err(GatewayError::SchemaViolation(e)) => e,
                Err(e) => return Err(e.into()),
            };
            last_error = error;
            if attempt == 0 {
                events.push(StrategyEvent::Repair { error: last_error.clone() });
                messages.push(ChatMessage::system(format!(
                    "Your previous reply was invalid: {last_error}. Call only the declared tools with valid arguments, or answer in plain text."
                )));
            }
        }
        Err(StrategyError::Invalid(format!("schema violation after one retry: {last_error}")))
    }

    pub(crate) fn commit(&mut self, message: ChatMessage) {
        self.ctx.history.push(message);
    }
}

impl Strategy for FunctionCallingAgent {
    fn kind(&self) -> StrategyKind {
        StrategyKind::FunctionCalling
    }

    fn context(&self) -> &StrategyContext {
        &self.ctx
    }

    fn observe_greeting(&mut self, text: &str) {
        self.ctx.history.push(ChatMessage::assistant(text));
    }

    fn observe_user(&mut self, text: &str) -> Result<Vec<StrategyEvent>, StrategyError> {
        self.ctx.history.push(ChatMessage::user(text));
        Ok(Vec::new())
    }

    fn observe_tool_result(&mut self, call: &ToolCall, outcome: &ToolOutcome) {
        self.ctx.history.push(ChatMessage::tool(call.id.clone(), outcome.render()));
    }

    fn decide(&mut self) -> Result<Decision, StrategyError> {
        let (action, message, events) = self.propose(&[])?;
        self.commit(message);
        Ok(Decision { action, events })
    }
}
