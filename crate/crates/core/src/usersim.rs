//! LLM-backed user simulator with stop detection and fault injection.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Speaker, TranscriptEntry};
use crate::gateway::{
    make_scripted_provider, ChatMessage, ChatProvider, CompletionRequest, GatewayError, ProviderScript, Role,
};
use crate::prompts;

pub const DEFAULT_STOP_TOKEN: &str = "###STOP###";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserTurn {
    Utterance(String),
    /// Carries the raw message that ended the conversation.
    Stop(String),
    TransferAccepted,
}

/// Scripted deviation from the instruction at one user turn (1-based).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultProfile {
    #[serde(default = "enabled_by_default")]
    pub enabled: bool,
    pub deviation_turn: usize,
    pub deviation_text: String,
}

fn enabled_by_default() -> bool {
    true
}

impl FaultProfile {
    pub fn at_turn(turn: usize, text: impl Into<String>) -> Self {
        Self {
            enabled: true,
            deviation_turn: turn,
            deviation_text: text.into(),
        }
    }

    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.enabled && self.deviation_turn == 0 {
            return Err("deviation_turn must be >= 1".into());
        }
        Ok(())
    }
}

/// True iff the trimmed message is exactly the stop token.
pub fn detect_stop(text: &str, stop_token: &str) -> bool {
    text.trim() == stop_token
}

/// Produces the user's reply to the last agent message.
///
/// `history` is in the agent's frame (assistant = agent). At the faulted
/// turn the deviation text replaces the provider entirely; the provider is
/// not consulted for that turn.
pub fn next_user_utterance(
    instruction: &str,
    history: &[ChatMessage],
    provider: &dyn ChatProvider,
    fault: &FaultProfile,
    stop_token: &str,
    model: &str,
) -> Result<UserTurn, GatewayError> {
    if history.last().map(|m| m.role) != Some(Role::Assistant) {
        return Err(GatewayError::InvalidRequest(
            "the user can only reply to an assistant message".into(),
        ));
    }
    let turn = history.iter().filter(|m| m.role == Role::User).count() + 1;
    if fault.enabled && fault.deviation_turn == turn {
        return Ok(UserTurn::Utterance(fault.deviation_text.clone()));
    }

    let system = prompts::USER_SYSTEM.render(&[("instruction", instruction), ("stop_token", stop_token)]);
    let mut messages = vec![ChatMessage::system(system)];
    // The simulator plays the assistant role in its own request.
    messages.extend(history.iter().filter_map(|m| match m.role {
        Role::Assistant => Some(ChatMessage::user(m.content.clone())),
        Role::User => Some(ChatMessage::assistant(m.content.clone())),
        _ => None,
    }));
    let reply = provider.complete(&CompletionRequest::new(model, messages))?;
    if detect_stop(&reply.content, stop_token) {
        Ok(UserTurn::Stop(reply.content))
    } else {
        Ok(UserTurn::Utterance(reply.content))
    }
}

pub trait UserSimulator {
    fn reply(&mut self, transcript: &[TranscriptEntry]) -> Result<UserTurn, GatewayError>;

    fn accept_transfer(&mut self) -> UserTurn {
        UserTurn::TransferAccepted
    }
}

pub struct LlmUserSimulator {
    instruction: String,
    provider: Arc<dyn ChatProvider>,
    fault: FaultProfile,
    stop_token: String,
    model: String,
    stopped: bool,
}

impl LlmUserSimulator {
    pub fn new(instruction: impl Into<String>, provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            instruction: instruction.into(),
            provider,
            fault: FaultProfile::disabled(),
            stop_token: DEFAULT_STOP_TOKEN.into(),
            model: "user-simulator".into(),
            stopped: false,
        }
    }

    pub fn with_fault(mut self, fault: FaultProfile) -> Self {
        self.fault = fault;
        self
    }

    pub fn with_stop_token(mut self, token: impl Into<String>) -> Self {
        self.stop_token = token.into();
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }
}

impl UserSimulator for LlmUserSimulator {
    fn reply(&mut self, transcript: &[TranscriptEntry]) -> Result<UserTurn, GatewayError> {
        if self.stopped {
            return Err(GatewayError::InvalidRequest("conversation already stopped".into()));
        }
        let history: Vec<ChatMessage> = transcript
            .iter()
            .filter_map(|e| match e.speaker {
                Speaker::Agent => Some(ChatMessage::assistant(e.text.clone())),
                Speaker::User => Some(ChatMessage::user(e.text.clone())),
                Speaker::Tool => None,
            })
            .collect();
        let turn = next_user_utterance(
            &self.instruction,
            &history,
            self.provider.as_ref(),
            &self.fault,
            &self.stop_token,
            &self.model,
        )?;
        if matches!(turn, UserTurn::Stop(_)) {
            self.stopped = true;
        }
        Ok(turn)
    }
}

/// A user that says `lines` in order, then runs out.
pub fn scripted_lines<I>(lines: I) -> LlmUserSimulator
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    let script = ProviderScript::sequence(lines.into_iter().map(|l| l.as_ref().to_string()));
    let provider = make_scripted_provider(script).expect("sequence scripts are always valid");
    LlmUserSimulator::new("", Arc::new(provider))
}
