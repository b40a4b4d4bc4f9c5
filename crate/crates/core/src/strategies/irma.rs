//! Input reformulation: each user query reaches the assistant wrapped with
//! a memory of earlier queries, the policy constraints that apply, and a
//! short list of suggested tools.
//!
//! ```text
//! {query}
//!
//! <memory>...</memory>
//! <constraints>...</constraints>
//! <tool_suggested>...</tool_suggested>
//! ```
//!
//! A block that is disabled or empty contains exactly `None`; otherwise it
//! holds one `- item` line per entry between a leading and trailing newline.

use std::collections::HashSet;
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use super::text_agent::TextAgent;
use super::{
    describe_tools, parse_line_items, Ablation, AgentProviders, Decision, DomainContext, Strategy, StrategyConfig,
    StrategyContext, StrategyError, StrategyEvent, StrategyKind,
};
use crate::env::{ToolCall, ToolOutcome, ToolRegistry};
use crate::gateway::{ChatMessage, ChatProvider, CompletionRequest, GatewayError, Role};
use crate::prompts;

/// Every user query of the trial, oldest first, including the current one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrmaMemory {
    pub entries: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintChecklist {
    pub items: Vec<String>,
    /// The query only answered a follow-up question, or the reply was unusable.
    pub none_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSuggestion {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSuggestionList {
    pub items: Vec<ToolSuggestion>,
}

/// Blocks are `None` when disabled or empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReformulatedInput {
    pub query: String,
    pub memory: Option<Vec<String>>,
    pub constraints: Option<Vec<String>>,
    pub tools: Option<Vec<ToolSuggestion>>,
}

pub type ParsedReformulation = ReformulatedInput;

const TAGS: [&str; 3] = ["memory", "constraints", "tool_suggested"];

fn escape(s: &str, newlines: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\n' if newlines => out.push_str("&#10;"),
            '\r' if newlines => out.push_str("&#13;"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    s.replace("&#13;", "\r")
        .replace("&#10;", "\n")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&amp;", "&")
}

fn non_empty<T>(v: Option<Vec<T>>) -> Option<Vec<T>> {
    v.filter(|v| !v.is_empty())
}

fn render_block(lines: Option<Vec<String>>) -> String {
    match lines {
        None => "None".into(),
        Some(lines) => {
            let mut out = String::from("\n");
            for l in lines {
                out.push_str("- ");
                out.push_str(&l);
                out.push('\n');
            }
            out
        }
    }
}

impl ReformulatedInput {
    pub fn render(&self) -> String {
        let memory = self.memory.as_ref().map(|m| m.iter().map(|e| escape(e, true)).collect());
        let constraints = self.constraints.as_ref().map(|c| c.iter().map(|e| escape(e, true)).collect());
        let tools = self.tools.as_ref().map(|t| {
            t.iter()
                .map(|s| format!("{}: {}", escape(&s.name, true), escape(&s.reason, true)))
                .collect()
        });
        let blocks = [render_block(memory), render_block(constraints), render_block(tools)];
        let mut out = escape(&self.query, false);
        out.push('\n');
        for (tag, body) in TAGS.iter().zip(blocks) {
            out.push_str(&format!("\n<{tag}>{body}</{tag}>"));
        }
        out
    }
}

pub fn irma_memorize(memory: &IrmaMemory, new_query: &str) -> IrmaMemory {
    let mut next = memory.clone();
    next.entries.push(new_query.to_string());
    next
}

/// Assembles the reformulated input. `None` arguments are disabled blocks.
pub fn irma_reformulate(
    user_query: &str,
    memory: Option<&IrmaMemory>,
    constraints: Option<&ConstraintChecklist>,
    tool_suggestions: Option<&ToolSuggestionList>,
) -> ReformulatedInput {
    ReformulatedInput {
        query: user_query.to_string(),
        memory: non_empty(memory.map(|m| m.entries.clone())),
        constraints: non_empty(constraints.filter(|c| !c.none_flag).map(|c| c.items.clone())),
        tools: non_empty(tool_suggestions.map(|t| t.items.clone())),
    }
}

/// Inverse of [`ReformulatedInput::render`].
pub fn parse_reformulated(text: &str) -> Result<ParsedReformulation, String> {
    let mut rest = text;
    let open = "<memory>";
    let at = rest.find(open).ok_or("missing <memory>")?;
    let query = rest[..at]
        .strip_suffix("\n\n")
        .ok_or("query must be followed by a blank line")?;
    if query.contains('<') || query.contains('>') {
        return Err("unescaped angle bracket in query".into());
    }
    let query = unescape(query);
    rest = &rest[at..];
    let mut bodies = Vec::new();
    for (i, tag) in TAGS.iter().enumerate() {
        if i > 0 {
            rest = rest.strip_prefix('\n').ok_or_else(|| format!("expected newline before <{tag}>"))?;
        }
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        rest = rest.strip_prefix(open.as_str()).ok_or_else(|| format!("expected {open}"))?;
        let end = rest.find(close.as_str()).ok_or_else(|| format!("missing {close}"))?;
        bodies.push(parse_block(tag, &rest[..end])?);
        rest = &rest[end + close.len()..];
    }
    if !rest.is_empty() {
        return Err(format!("trailing text after </tool_suggested>: {rest:?}"));
    }
    let tools = match bodies.pop().unwrap() {
        None => None,
        Some(lines) => Some(
            lines
                .iter()
                .map(|l| {
                    let (name, reason) = l.split_once(": ").ok_or_else(|| format!("tool line without reason: {l:?}"))?;
                    Ok(ToolSuggestion {
                        name: unescape(name),
                        reason: unescape(reason),
                    })
                })
                .collect::<Result<Vec<_>, String>>()?,
        ),
    };
    let constraints = bodies.pop().unwrap().map(|v| v.iter().map(|l| unescape(l)).collect());
    let memory = bodies.pop().unwrap().map(|v| v.iter().map(|l| unescape(l)).collect());
    Ok(ReformulatedInput {
        query,
        memory,
        constraints,
        tools,
    })
}

fn parse_block(tag: &str, body: &str) -> Result<Option<Vec<String>>, String> {
    if body == "None" {
        return Ok(None);
    }
    if body.contains('<') || body.contains('>') {
        return Err(format!("unescaped angle bracket in <{tag}>"));
    }
    let inner = body
        .strip_prefix('\n')
        .and_then(|b| b.strip_suffix('\n'))
        .ok_or_else(|| format!("<{tag}> must hold None or newline-delimited lines"))?;
    inner
        .split('\n')
        .map(|l| {
            l.strip_prefix("- ")
                .map(str::to_string)
                .ok_or_else(|| format!("<{tag}> line without \"- \": {l:?}"))
        })
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// Policy rules relevant to `user_query`, judged with the assistant's last
/// message so that answers to follow-up questions yield `None`.
pub fn irma_constraints(
    policy_doc: &str,
    user_query: &str,
    history: &[ChatMessage],
    provider: &dyn ChatProvider,
    model: &str,
) -> Result<ConstraintChecklist, GatewayError> {
    if policy_doc.trim().is_empty() {
        return Ok(ConstraintChecklist::default());
    }
    let last = history
        .iter()
        .rev()
        .find(|m| m.role == Role::Assistant)
        .map_or("(none)", |m| m.content.as_str());
    let request = CompletionRequest::new(
        model,
        vec![
            ChatMessage::system(prompts::IRMA_CONSTRAINTS.render(&[("policy", policy_doc)])),
            ChatMessage::user(format!("Assistant's last message:\n{last}\n\nUser query:\n{user_query}")),
        ],
    );
    let reply = provider.complete(&request)?;
    Ok(match parse_line_items(&reply.content) {
        Ok(Some(items)) => ConstraintChecklist { items, none_flag: false },
        Ok(None) => ConstraintChecklist { items: Vec::new(), none_flag: true },
        Err(e) => {
            warn!("constraint reply unusable, treating as None: {e}");
            ConstraintChecklist { items: Vec::new(), none_flag: true }
        }
    })
}

/// At most `cap` distinct registry tools, in the order suggested.
pub fn irma_suggest_tools(
    registry: &ToolRegistry,
    user_query: &str,
    provider: &dyn ChatProvider,
    cap: usize,
    model: &str,
) -> Result<ToolSuggestionList, GatewayError> {
    if cap == 0 || registry.specs().is_empty() {
        return Ok(ToolSuggestionList::default());
    }
    let cap_text = cap.to_string();
    let request = CompletionRequest::new(
        model,
        vec![
            ChatMessage::system(prompts::IRMA_TOOLS.render(&[("tools", &describe_tools(registry)), ("cap", &cap_text)])),
            ChatMessage::user(format!("User query:\n{user_query}")),
        ],
    );
    let reply = provider.complete(&request)?;
    let lines = match parse_line_items(&reply.content) {
        Ok(l) => l.unwrap_or_default(),
        Err(e) => {
            warn!("tool suggestion reply unusable, suggesting nothing: {e}");
            Vec::new()
        }
    };
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for line in lines {
        let (name, reason) = line.split_once(':').unwrap_or((line.as_str(), ""));
        let name = name.trim().trim_matches('`');
        if !registry.contains(name) {
            warn!("dropping suggestion of unknown tool {name:?}");
            continue;
        }
        if seen.insert(name.to_string()) {
            items.push(ToolSuggestion {
                name: name.to_string(),
                reason: reason.trim().to_string(),
            });
        }
        if items.len() == cap {
            break;
        }
    }
    Ok(ToolSuggestionList { items })
}

pub struct IrmaAgent {
    inner: TextAgent,
    memory: IrmaMemory,
    ablation: Ablation,
    cap: usize,
    model: String,
    constraints: Arc<dyn ChatProvider>,
    tool_suggester: Arc<dyn ChatProvider>,
}

impl IrmaAgent {
    pub fn new(domain: &DomainContext, providers: AgentProviders, config: &StrategyConfig) -> Self {
        Self {
            inner: TextAgent::new(config.irma_prompt, domain, providers.assistant, config),
            memory: IrmaMemory::default(),
            ablation: config.ablation,
            cap: config.suggestion_cap,
            model: config.model.clone(),
            constraints: providers.constraints,
            tool_suggester: providers.tool_suggester,
        }
    }

    pub fn memory(&self) -> &IrmaMemory {
        &self.memory
    }
}

impl Strategy for IrmaAgent {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Irma
    }

    fn context(&self) -> &StrategyContext {
        self.inner.context()
    }

    fn observe_greeting(&mut self, text: &str) {
        self.inner.observe_greeting(text);
    }

    fn observe_user(&mut self, text: &str) -> Result<Vec<StrategyEvent>, StrategyError> {
        self.memory = irma_memorize(&self.memory, text);
        let ctx = self.inner.context();
        let constraints = if self.ablation.constraints {
            Some(irma_constraints(&ctx.policy_doc, text, &ctx.history, self.constraints.as_ref(), &self.model)?)
        } else {
            None
        };
        let tools = if self.ablation.tools {
            Some(irma_suggest_tools(&ctx.tool_registry, text, self.tool_suggester.as_ref(), self.cap, &self.model)?)
        } else {
            None
        };
        let memory = self.ablation.memory.then_some(&self.memory);
        let rendered = irma_reformulate(text, memory, constraints.as_ref(), tools.as_ref()).render();
        self.inner.push_user(rendered.clone());
        Ok(vec![StrategyEvent::Reformulation {
            ablation: self.ablation.label(),
            rendered,
        }])
    }

    fn observe_tool_result(&mut self, call: &ToolCall, outcome: &ToolOutcome) {
        self.inner.observe_tool_result(call, outcome);
    }

    fn decide(&mut self) -> Result<Decision, StrategyError> {
        self.inner.decide()
    }
}
