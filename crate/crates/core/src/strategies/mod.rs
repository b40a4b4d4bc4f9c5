//! Agent decision procedures behind one interface.
//!
//! A strategy instance lives for one trial. The runner feeds it what the
//! environment produced (greeting, user utterances, tool results) and asks
//! it for exactly one [`AgentAction`] at a time.

pub mod action_text;
pub mod function_calling;
pub mod irma;
pub mod self_reflection;
pub mod text_agent;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{AgentAction, ToolCall, ToolOutcome, ToolRegistry};
use crate::gateway::{ChatMessage, ChatProvider, GatewayError, UnscriptedProvider};

pub use function_calling::FunctionCallingAgent;
pub use irma::{
    irma_constraints, irma_memorize, irma_reformulate, irma_suggest_tools, parse_reformulated, ConstraintChecklist,
    IrmaAgent, IrmaMemory, ParsedReformulation, ReformulatedInput, ToolSuggestion, ToolSuggestionList,
};
pub use self_reflection::{sr_retrieve_rules, sr_verify, SelfReflectionAgent, Verdict};
pub use text_agent::{PromptStyle, TextAgent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    React,
    FunctionCalling,
    Fact,
    SelfReflection,
    Irma,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::React,
        StrategyKind::FunctionCalling,
        StrategyKind::Fact,
        StrategyKind::SelfReflection,
        StrategyKind::Irma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::React => "react",
            StrategyKind::FunctionCalling => "function-calling",
            StrategyKind::Fact => "fact",
            StrategyKind::SelfReflection => "self-reflection",
            StrategyKind::Irma => "irma",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown strategy \"{0}\" (expected react, function-calling, fact, self-reflection or irma)")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyKind {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "react" => Ok(StrategyKind::React),
            "function-calling" | "fc" => Ok(StrategyKind::FunctionCalling),
            "fact" => Ok(StrategyKind::Fact),
            "self-reflection" | "sr" => Ok(StrategyKind::SelfReflection),
            "irma" => Ok(StrategyKind::Irma),
            _ => Err(UnknownStrategy(s.to_string())),
        }
    }
}

/// Which IRMA blocks are active. Disabled blocks render as `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub memory: bool,
    pub constraints: bool,
    pub tools: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            memory: true,
            constraints: true,
            tools: true,
        }
    }
}

impl Ablation {
    /// The seven non-empty subsets of {M, C, T}.
    pub fn configurations() -> Vec<Ablation> {
        (1u8..8)
            .map(|bits| Ablation {
                memory: bits & 1 != 0,
                constraints: bits & 2 != 0,
                tools: bits & 4 != 0,
            })
            .collect()
    }

    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.memory, "M"), (self.constraints, "C"), (self.tools, "T")]
            .into_iter()
            .filter_map(|(on, l)| on.then_some(l))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }
}

pub const DEFAULT_SUGGESTION_CAP: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub model: String,
    /// Main assistant only; sub-agents always run at temperature 0.
    pub temperature: f64,
    pub ablation: Ablation,
    pub suggestion_cap: usize,
    /// Prompt style of IRMA's assistant.
    pub irma_prompt: PromptStyle,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            model: "assistant".into(),
            temperature: 0.0,
            ablation: Ablation::default(),
            suggestion_cap: DEFAULT_SUGGESTION_CAP,
            irma_prompt: PromptStyle::Fact,
        }
    }
}

/// One provider per agent role.
#[derive(Clone)]
pub struct AgentProviders {
    pub assistant: Arc<dyn ChatProvider>,
    pub constraints: Arc<dyn ChatProvider>,
    pub tool_suggester: Arc<dyn ChatProvider>,
    pub retriever: Arc<dyn ChatProvider>,
    pub verifier: Arc<dyn ChatProvider>,
}

impl AgentProviders {
    /// Every role backed by the same provider.
    pub fn shared(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            assistant: provider.clone(),
            constraints: provider.clone(),
            tool_suggester: provider.clone(),
            retriever: provider.clone(),
            verifier: provider,
        }
    }

    /// Only the assistant is backed; any sub-agent call fails.
    pub fn assistant_only(provider: Arc<dyn ChatProvider>) -> Self {
        let none: Arc<dyn ChatProvider> = Arc::new(UnscriptedProvider);
        Self {
            assistant: provider,
            constraints: none.clone(),
            tool_suggester: none.clone(),
            retriever: none.clone(),
            verifier: none,
        }
    }
}

/// Read-only domain inputs shared by every strategy.
#[derive(Debug, Clone)]
pub struct DomainContext {
    pub policy_doc: String,
    pub tools: ToolRegistry,
    pub identity_tool: Option<String>,
}

/// The assistant's observable input: policy, tools and its own history.
#[derive(Debug, Clone)]
pub struct StrategyContext {
    pub policy_doc: String,
    pub tool_registry: ToolRegistry,
    /// Starts with the strategy's system prompt.
    pub history: Vec<ChatMessage>,
}

impl StrategyContext {
    pub fn new(domain: &DomainContext, system_prompt: String) -> Self {
        Self {
            policy_doc: domain.policy_doc.clone(),
            tool_registry: domain.tools.clone(),
            history: vec![ChatMessage::system(system_prompt)],
        }
    }

    pub fn last_assistant(&self) -> Option<&ChatMessage> {
        self.history.iter().rev().find(|m| m.role == crate::gateway::Role::Assistant)
    }
}

/// Side records a decision leaves in the trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StrategyEvent {
    Reformulation {
        ablation: String,
        rendered: String,
    },
    Reflection {
        planned: ToolCall,
        rules: Vec<String>,
        verdict: Verdict,
    },
    FollowUp {
        intercepted: ToolCall,
        reason: String,
    },
    Repair {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: AgentAction,
    pub events: Vec<StrategyEvent>,
}

impl Decision {
    pub fn plain(action: AgentAction) -> Self {
        Self {
            action,
            events: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StrategyError {
    #[error(transparent)]
    Provider(#[from] GatewayError),
    #[error("strategy error: {0}")]
    Invalid(String),
}

impl StrategyError {
    pub fn is_provider_failure(&self) -> bool {
        matches!(self, StrategyError::Provider(_))
    }
}

pub trait Strategy: Send {
    fn kind(&self) -> StrategyKind;

    fn context(&self) -> &StrategyContext;

    /// The environment's opening line, said on the agent's behalf.
    fn observe_greeting(&mut self, text: &str);

    /// A genuine user turn. Returns events such as reformulations.
    fn observe_user(&mut self, text: &str) -> Result<Vec<StrategyEvent>, StrategyError>;

    fn observe_tool_result(&mut self, call: &ToolCall, outcome: &ToolOutcome);

    /// Exactly one action, or a typed error.
    fn decide(&mut self) -> Result<Decision, StrategyError>;
}

pub fn build_strategy(
    kind: StrategyKind,
    domain: &DomainContext,
    providers: AgentProviders,
    config: &StrategyConfig,
) -> Box<dyn Strategy> {
    match kind {
        StrategyKind::React => Box::new(TextAgent::new(PromptStyle::React, domain, providers.assistant, config)),
        StrategyKind::Fact => Box::new(TextAgent::new(PromptStyle::Fact, domain, providers.assistant, config)),
        StrategyKind::FunctionCalling => Box::new(FunctionCallingAgent::new(domain, providers.assistant, config)),
        StrategyKind::SelfReflection => Box::new(SelfReflectionAgent::new(domain, providers, config)),
        StrategyKind::Irma => Box::new(IrmaAgent::new(domain, providers, config)),
    }
}

/// Tool listing used inside text prompts.
pub fn describe_tools(registry: &ToolRegistry) -> String {
    registry
        .specs()
        .iter()
        .map(|s| {
            let params: Vec<String> = s
                .params
                .iter()
                .map(|p| format!("{}: {}{}", p.name, p.kind.as_str(), if p.required { "" } else { "?" }))
                .collect();
            format!("- {}({}): {}", s.name, params.join(", "), s.description)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Items from a line-item reply: `- item` lines, or `None` for nothing.
/// `Ok(None)` means the reply was exactly `None`; `Err` means no items
/// could be recovered.
pub(crate) fn parse_line_items(reply: &str) -> Result<Option<Vec<String>>, String> {
    let trimmed = reply.trim();
    if is_none_reply(trimmed) {
        return Ok(None);
    }
    let items: Vec<String> = trimmed
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix("- ")
                .or_else(|| l.strip_prefix("* "))
                .map(|s| s.trim().to_string())
        })
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        Err(format!("no line items in reply {trimmed:?}"))
    } else {
        Ok(Some(items))
    }
}

fn is_none_reply(s: &str) -> bool {
    let s = s.trim_end_matches('.');
    s.eq_ignore_ascii_case("none")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seven_ablation_configurations() {
        let labels: Vec<String> = Ablation::configurations().iter().map(Ablation::label).collect();
        assert_eq!(labels, ["M", "C", "M+C", "T", "M+T", "C+T", "M+C+T"]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.as_str().parse::<StrategyKind>().unwrap(), k);
        }
        assert_eq!("fc".parse::<StrategyKind>().unwrap(), StrategyKind::FunctionCalling);
        assert!("plangen".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn line_items() {
        assert_eq!(parse_line_items("None"), Ok(None));
        assert_eq!(parse_line_items(" none. "), Ok(None));
        assert_eq!(
            parse_line_items("Rules:\n- a\n* b\n-   \n"),
            Ok(Some(vec!["a".to_string(), "b".to_string()]))
        );
        assert!(parse_line_items("I think the rule is a").is_err());
    }
}
