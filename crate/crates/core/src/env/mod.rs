//! Deterministic episodic environment: database, tool execution,
//! observations and the terminal reward.
//!
//! Tool calls are deterministic transitions over the [`DomainDb`]; a
//! `Respond` action hands control to the user simulator, which is the
//! only stochastic part of an episode.

pub mod db;
pub mod reward;
pub mod suite;
pub mod tools;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use db::{canonical_json, db_hash, DbDigest, Document, DomainDb};
pub use reward::compute_reward;
pub use suite::{load_task_suite, parse_task_suite, SuiteError, Task, TaskAnnotations, TaskSuite};
pub use tools::{execute_tool, ParamSpec, ParamType, ToolCall, ToolRegistry, ToolSpec};

use crate::usersim::{UserSimulator, UserTurn};

/// One agent move: call a tool or talk to the user, never both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentAction {
    ToolCall(ToolCall),
    Respond { text: String },
}

impl AgentAction {
    pub fn respond(text: impl Into<String>) -> Self {
        AgentAction::Respond { text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutcome {
    Payload(Value),
    Error(String),
}

impl ToolOutcome {
    pub fn is_error(&self) -> bool {
        matches!(self, ToolOutcome::Error(_))
    }

    /// Text form handed back to the agent.
    pub fn render(&self) -> String {
        match self {
            ToolOutcome::Payload(Value::String(s)) => s.clone(),
            ToolOutcome::Payload(v) => canonical_json(v),
            ToolOutcome::Error(e) => format!("Error: {e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    UserStop,
    TransferToHuman,
    ProviderFailure,
    StrategyError,
    MaxTurns,
    MaxActions,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminationCause::UserStop => "user_stop",
            TerminationCause::TransferToHuman => "transfer_to_human",
            TerminationCause::ProviderFailure => "provider_failure",
            TerminationCause::StrategyError => "strategy_error",
            TerminationCause::MaxTurns => "max_turns",
            TerminationCause::MaxActions => "max_actions",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observation {
    ToolResult(ToolOutcome),
    UserUtterance(String),
    Terminated(TerminationCause),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent,
    User,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EnvError {
    #[error("episode already terminated ({})", .0.as_str())]
    Done(TerminationCause),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub db: DomainDb,
    pub transcript: Vec<TranscriptEntry>,
    /// User utterances consumed so far, including a final stop message.
    pub turn_count: usize,
    pub done: bool,
    pub terminal: Option<TerminationCause>,
}

impl EnvState {
    pub fn new(db: DomainDb) -> Self {
        Self {
            db,
            transcript: Vec::new(),
            turn_count: 0,
            done: false,
            terminal: None,
        }
    }

    pub fn finish(&mut self, cause: TerminationCause) {
        if !self.done {
            self.done = true;
            self.terminal = Some(cause);
        }
    }

    pub fn agent_messages(&self) -> impl Iterator<Item = &str> {
        self.transcript
            .iter()
            .filter(|e| e.speaker == Speaker::Agent)
            .map(|e| e.text.as_str())
    }

    fn push(&mut self, speaker: Speaker, text: impl Into<String>) {
        self.transcript.push(TranscriptEntry {
            speaker,
            text: text.into(),
        });
    }
}

/// Advances the episode by one agent action.
///
/// Tool calls never consume a user turn. A successful call to the
/// registry's handoff tool ends the episode with `TransferToHuman`.
pub fn step(
    state: &mut EnvState,
    tools: &ToolRegistry,
    action: &AgentAction,
    user: &mut dyn UserSimulator,
) -> Result<Observation, EnvError> {
    if let Some(cause) = state.terminal.filter(|_| state.done) {
        return Err(EnvError::Done(cause));
    }
    match action {
        AgentAction::ToolCall(call) => {
            let (db, obs) = execute_tool(&state.db, tools, call);
            state.db = db;
            if let Observation::ToolResult(outcome) = &obs {
                let record = serde_json::json!({ "call": call, "result": outcome });
                state.push(Speaker::Tool, canonical_json(&record));
                let handed_off = tools.handoff_tool() == Some(call.name.as_str()) && !outcome.is_error();
                if handed_off && user.accept_transfer() == UserTurn::TransferAccepted {
                    state.finish(TerminationCause::TransferToHuman);
                }
            }
            Ok(obs)
        }
        AgentAction::Respond { text } => {
            state.push(Speaker::Agent, text.clone());
            match user.reply(&state.transcript) {
                Ok(UserTurn::Utterance(u)) => {
                    state.push(Speaker::User, u.clone());
                    state.turn_count += 1;
                    Ok(Observation::UserUtterance(u))
                }
                Ok(UserTurn::Stop(raw)) => {
                    state.push(Speaker::User, raw);
                    state.turn_count += 1;
                    state.finish(TerminationCause::UserStop);
                    Ok(Observation::Terminated(TerminationCause::UserStop))
                }
                Ok(UserTurn::TransferAccepted) => {
                    state.finish(TerminationCause::TransferToHuman);
                    Ok(Observation::Terminated(TerminationCause::TransferToHuman))
                }
                Err(e) => {
                    log::warn!("user simulator failed: {e}");
                    state.finish(TerminationCause::ProviderFailure);
                    Ok(Observation::Terminated(TerminationCause::ProviderFailure))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::mini_retail;
    use crate::usersim::scripted_lines;
    use serde_json::json;

    fn fixture() -> (EnvState, ToolRegistry) {
        let registry = mini_retail::registry(mini_retail::tool_specs()).unwrap();
        (EnvState::new(mini_retail::sample_db()), registry)
    }

    #[test]
    fn respond_returns_scripted_utterance() {
        let (mut state, tools) = fixture();
        let mut user = scripted_lines(["Cancel order o1"]);
        let obs = step(&mut state, &tools, &AgentAction::respond("How can I help?"), &mut user).unwrap();
        assert_eq!(obs, Observation::UserUtterance("Cancel order o1".into()));
        assert_eq!(state.turn_count, 1);
        assert_eq!(state.transcript.len(), 2);
    }

    #[test]
    fn stop_token_terminates() {
        let (mut state, tools) = fixture();
        let mut user = scripted_lines(["###STOP###"]);
        let obs = step(&mut state, &tools, &AgentAction::respond("Anything else?"), &mut user).unwrap();
        assert_eq!(obs, Observation::Terminated(TerminationCause::UserStop));
        assert!(state.done);
        let again = step(&mut state, &tools, &AgentAction::respond("hello?"), &mut user);
        assert_eq!(again, Err(EnvError::Done(TerminationCause::UserStop)));
    }

    #[test]
    fn tool_steps_consume_no_user_turn() {
        let (mut state, tools) = fixture();
        let mut user = scripted_lines::<[&str; 0]>([]);
        let call = ToolCall::new("get_order", json!({"order_id": "o1"}));
        let obs = step(&mut state, &tools, &AgentAction::ToolCall(call), &mut user).unwrap();
        let expected = state.db.get("orders", "o1").unwrap().clone();
        assert_eq!(obs, Observation::ToolResult(ToolOutcome::Payload(expected)));
        assert_eq!(state.turn_count, 0);
        assert_eq!(state.db, mini_retail::sample_db());
    }

    #[test]
    fn user_failure_becomes_provider_failure() {
        let (mut state, tools) = fixture();
        let mut user = scripted_lines::<[&str; 0]>([]);
        let obs = step(&mut state, &tools, &AgentAction::respond("hi"), &mut user).unwrap();
        assert_eq!(obs, Observation::Terminated(TerminationCause::ProviderFailure));
        assert!(state.done);
    }

    #[test]
    fn handoff_tool_ends_episode() {
        let (mut state, tools) = fixture();
        let mut user = scripted_lines::<[&str; 0]>([]);
        let call = ToolCall::new("transfer_to_human", json!({"summary": "user is inconsistent"}));
        step(&mut state, &tools, &AgentAction::ToolCall(call), &mut user).unwrap();
        assert_eq!(state.terminal, Some(TerminationCause::TransferToHuman));
    }
}
