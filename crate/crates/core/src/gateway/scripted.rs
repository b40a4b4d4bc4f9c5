//! Deterministic replay provider used by every offline run.

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, CompletionRequest, GatewayError, Role};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptMode {
    #[default]
    StrictSequence,
    Keyed,
}

/// Predicate over the incoming request. Matching is case-insensitive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRule {
    #[default]
    Any,
    /// Substring of the most recent user-role message.
    LatestUserContains(String),
    /// Substring of the last message, whatever its role.
    LatestContains(String),
    /// Substring of the first system message.
    SystemContains(String),
}

impl MatchRule {
    pub fn matches(&self, request: &CompletionRequest) -> bool {
        let has = |m: Option<&ChatMessage>, needle: &str| {
            m.is_some_and(|m| m.content.to_lowercase().contains(&needle.to_lowercase()))
        };
        match self {
            MatchRule::Any => true,
            MatchRule::LatestUserContains(s) => has(request.latest(Role::User), s),
            MatchRule::LatestContains(s) => has(request.messages.last(), s),
            MatchRule::SystemContains(s) => has(request.messages.iter().find(|m| m.role == Role::System), s),
        }
    }

    fn describe(&self) -> String {
        match self {
            MatchRule::Any => "any".into(),
            MatchRule::LatestUserContains(s) => format!("latest user message containing {s:?}"),
            MatchRule::LatestContains(s) => format!("latest message containing {s:?}"),
            MatchRule::SystemContains(s) => format!("system prompt containing {s:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Text(String),
    Message(ChatMessage),
}

impl Reply {
    pub fn to_message(&self) -> ChatMessage {
        match self {
            Reply::Text(t) => ChatMessage::assistant(t.clone()),
            Reply::Message(m) => m.clone(),
        }
    }
}

impl From<&str> for Reply {
    fn from(s: &str) -> Self {
        Reply::Text(s.to_string())
    }
}

impl From<String> for Reply {
    fn from(s: String) -> Self {
        Reply::Text(s)
    }
}

impl From<ChatMessage> for Reply {
    fn from(m: ChatMessage) -> Self {
        Reply::Message(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    #[serde(default, rename = "match")]
    pub rule: MatchRule,
    pub reply: Reply,
}

impl ScriptEntry {
    pub fn any(reply: impl Into<Reply>) -> Self {
        Self {
            rule: MatchRule::Any,
            reply: reply.into(),
        }
    }

    pub fn when(rule: MatchRule, reply: impl Into<Reply>) -> Self {
        Self {
            rule,
            reply: reply.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderScript {
    #[serde(default)]
    pub mode: ScriptMode,
    #[serde(default)]
    pub entries: Vec<ScriptEntry>,
}

impl ProviderScript {
    pub fn sequence<I, R>(replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<Reply>,
    {
        Self {
            mode: ScriptMode::StrictSequence,
            entries: replies.into_iter().map(ScriptEntry::any).collect(),
        }
    }

    pub fn keyed(entries: Vec<ScriptEntry>) -> Self {
        Self {
            mode: ScriptMode::Keyed,
            entries,
        }
    }
}

/// Replays a [`ProviderScript`].
///
/// Strict sequences consume one entry per call and must be confined to a
/// single trial; keyed scripts are stateless and reusable.
#[derive(Debug)]
pub struct ScriptedProvider {
    script: ProviderScript,
    cursor: Mutex<usize>,
    calls: AtomicUsize,
}

pub fn make_scripted_provider(script: ProviderScript) -> Result<ScriptedProvider, GatewayError> {
    if script.mode == ScriptMode::Keyed {
        let mut keys = HashSet::new();
        for entry in &script.entries {
            if !keys.insert(&entry.rule) {
                return Err(GatewayError::InvalidScript(format!(
                    "duplicate key: {}",
                    entry.rule.describe()
                )));
            }
        }
    }
    Ok(ScriptedProvider {
        script,
        cursor: Mutex::new(0),
        calls: AtomicUsize::new(0),
    })
}

impl ScriptedProvider {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        match self.script.mode {
            ScriptMode::StrictSequence => self.script.entries.len() - *self.cursor.lock().unwrap(),
            ScriptMode::Keyed => self.script.entries.len(),
        }
    }
}

impl ChatProvider for ScriptedProvider {
    fn send(&self, request: &CompletionRequest) -> Result<ChatMessage, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        match self.script.mode {
            ScriptMode::StrictSequence => {
                let mut cursor = self.cursor.lock().unwrap();
                let entry = self
                    .script
                    .entries
                    .get(*cursor)
                    .ok_or(GatewayError::ScriptExhausted { consumed: *cursor })?;
                if !entry.rule.matches(request) {
                    return Err(GatewayError::ScriptMismatch {
                        index: *cursor,
                        expected: entry.rule.describe(),
                    });
                }
                *cursor += 1;
                Ok(entry.reply.to_message())
            }
            ScriptMode::Keyed => self
                .script
                .entries
                .iter()
                .find(|e| e.rule.matches(request))
                .map(|e| e.reply.to_message())
                .ok_or(GatewayError::ScriptExhausted { consumed: 0 }),
        }
    }
}
