//! Function calling with one verification pass per planned tool call.
//!
//! A retriever lists the policy rules that apply to the user's messages;
//! a verifier judges the planned call against them. A rejected call is
//! never executed: the assistant receives the justification and proposes
//! once more, and that revision is not verified again.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use super::function_calling::FunctionCallingAgent;
use super::{parse_line_items, AgentProviders, Decision, DomainContext, Strategy, StrategyConfig, StrategyContext, StrategyError, StrategyEvent, StrategyKind};
use crate::env::{AgentAction, ToolCall, ToolOutcome};
use crate::gateway::{ChatMessage, ChatProvider, CompletionRequest, GatewayError};
use crate::prompts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub approved: bool,
    pub justification: String,
    pub violated_rules: Vec<String>,
}

impl Verdict {
    fn approve(justification: impl Into<String>) -> Self {
        Self {
            approved: true,
            justification: justification.into(),
            violated_rules: Vec::new(),
        }
    }

    /// Parses the verifier's `Verdict:/Justification:/Violated:` reply.
    pub fn parse(reply: &str) -> Option<Self> {
        let mut approved = None;
        let mut justification = String::new();
        let mut violated_rules = Vec::new();
        for line in reply.lines().map(str::trim) {
            if let Some(v) = strip_label(line, "verdict:") {
                let v = v.trim_matches(|c: char| !c.is_ascii_alphabetic()).to_ascii_uppercase();
                approved = match v.as_str() {
                    "APPROVED" => Some(true),
                    "REJECTED" => Some(false),
                    _ => return None,
                };
            } else if let Some(j) = strip_label(line, "justification:") {
                justification = j.to_string();
            } else if let Some(r) = strip_label(line, "violated:") {
                if !r.is_empty() && !r.eq_ignore_ascii_case("none") {
                    violated_rules.push(r.to_string());
                }
            }
        }
        Some(Self {
            approved: approved?,
            justification,
            violated_rules,
        })
    }
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| line[label.len()..].trim())
}

/// Policy rules relevant to the user's messages so far. An empty policy
/// or no messages yields no rules without calling the provider.
pub fn sr_retrieve_rules(
    user_queries: &[String],
    policy_doc: &str,
    provider: &dyn ChatProvider,
    model: &str,
) -> Result<Vec<String>, GatewayError> {
    if policy_doc.trim().is_empty() || user_queries.is_empty() {
        return Ok(Vec::new());
    }
    let listing: Vec<String> = user_queries
        .iter()
        .enumerate()
        .map(|(i, q)| format!("{}. {q}", i + 1))
        .collect();
    let request = CompletionRequest::new(
        model,
        vec![
            ChatMessage::system(prompts::SR_RETRIEVER.render(&[("policy", policy_doc)])),
            ChatMessage::user(format!("User messages so far:\n{}", listing.join("\n"))),
        ],
    );
    let reply = provider.complete(&request)?;
    Ok(match parse_line_items(&reply.content) {
        Ok(items) => items.unwrap_or_default(),
        Err(e) => {
            warn!("retriever reply unusable, verifying against no rules: {e}");
            Vec::new()
        }
    })
}

/// Judges one planned call. An unreadable reply counts as approval.
pub fn sr_verify(
    planned: &ToolCall,
    rules: &[String],
    provider: &dyn ChatProvider,
    model: &str,
) -> Result<Verdict, GatewayError> {
    let rules_text = if rules.is_empty() {
        "None".to_string()
    } else {
        rules.iter().map(|r| format!("- {r}")).collect::<Vec<_>>().join("\n")
    };
    let request = CompletionRequest::new(
        model,
        vec![
            ChatMessage::system(prompts::SR_VERIFIER.render(&[("rules", &rules_text)])),
            ChatMessage::user(format!("Planned tool call: {planned}")),
        ],
    );
    let reply = provider.complete(&request)?;
    Ok(Verdict::parse(&reply.content).unwrap_or_else(|| {
        warn!("verifier reply has no verdict, approving: {:?}", reply.content);
        Verdict::approve("unreadable verifier reply")
    }))
}

pub struct SelfReflectionAgent {
    inner: FunctionCallingAgent,
    retriever: Arc<dyn ChatProvider>,
    verifier: Arc<dyn ChatProvider>,
    model: String,
    user_queries: Vec<String>,
    verifications: usize,
}

impl SelfReflectionAgent {
    pub fn new(domain: &DomainContext, providers: AgentProviders, config: &StrategyConfig) -> Self {
        Self {
            inner: FunctionCallingAgent::new(domain, providers.assistant, config),
            retriever: providers.retriever,
            verifier: providers.verifier,
            model: config.model.clone(),
            user_queries: Vec::new(),
            verifications: 0,
        }
    }

    /// Verifier calls made so far.
    pub fn verifications(&self) -> usize {
        self.verifications
    }
}

fn rejection_feedback(call: &ToolCall, verdict: &Verdict) -> ChatMessage {
    let mut text = format!("A reviewer rejected your planned tool call {call}.\nJustification: {}", verdict.justification);
    if !verdict.violated_rules.is_empty() {
        text.push_str("\nViolated rules:");
        for r in &verdict.violated_rules {
            text.push_str("\n- ");
            text.push_str(r);
        }
    }
    text.push_str("\nRevise your next action. Do not repeat a call that breaks a rule.");
    ChatMessage::system(text)
}

impl Strategy for SelfReflectionAgent {
    fn kind(&self) -> StrategyKind {
        StrategyKind::SelfReflection
    }

    fn context(&self) -> &StrategyContext {
        self.inner.context()
    }

    fn observe_greeting(&mut self, text: &str) {
        self.inner.observe_greeting(text);
    }

    fn observe_user(&mut self, text: &str) -> Result<Vec<StrategyEvent>, StrategyError> {
        self.user_queries.push(text.to_string());
        self.inner.observe_user(text)
    }

    fn observe_tool_result(&mut self, call: &ToolCall, outcome: &ToolOutcome) {
        self.inner.observe_tool_result(call, outcome);
    }

    fn decide(&mut self) -> Result<Decision, StrategyError> {
        let (action, message, mut events) = self.inner.propose(&[])?;
        let AgentAction::ToolCall(planned) = &action else {
            self.inner.commit(message);
            return Ok(Decision { action, events });
        };
        let policy = self.inner.context().policy_doc.clone();
        let rules = sr_retrieve_rules(&self.user_queries, &policy, self.retriever.as_ref(), &self.model)?;
        let verdict = sr_verify(planned, &rules, self.verifier.as_ref(), &self.model)?;
        self.verifications += 1;
        let approved = verdict.approved;
        let feedback = (!approved).then(|| rejection_feedback(planned, &verdict));
        events.push(StrategyEvent::Reflection {
            planned: planned.clone(),
            rules,
            verdict,
        });
        let Some(feedback) = feedback else {
            self.inner.commit(message);
            return Ok(Decision { action, events });
        };
        let (revised, revised_message, more) = self.inner.propose(std::slice::from_ref(&feedback))?;
        self.inner.history_mut().push(feedback);
        self.inner.commit(revised_message);
        events.extend(more);
        Ok(Decision { action: revised, events })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::mini_retail;
    use crate::gateway::{make_scripted_provider, ProviderScript, ScriptedProvider};
    use serde_json::json;

    fn scripted<I, R>(replies: I) -> Arc<ScriptedProvider>
    where
        I: IntoIterator<Item = R>,
        R: Into<crate::gateway::Reply>,
    {
        Arc::new(make_scripted_provider(ProviderScript::sequence(replies)).unwrap())
    }

    fn domain() -> DomainContext {
        let d = mini_retail::domain();
        DomainContext {
            policy_doc: d.policy.into(),
            tools: d.registry(mini_retail::tool_specs()).unwrap(),
            identity_tool: d.identity_tool.map(Into::into),
        }
    }

    #[test]
    fn verdict_parsing() {
        let v = Verdict::parse("Verdict: REJECTED\nJustification: order is shipped\nViolated: only delivered orders can be exchanged").unwrap();
        assert!(!v.approved);
        assert_eq!(v.violated_rules, ["only delivered orders can be exchanged"]);
        assert!(Verdict::parse("verdict: **approved**").unwrap().approved);
        assert_eq!(Verdict::parse("looks fine to me"), None);
    }

    #[test]
    fn empty_policy_skips_retrieval() {
        let p = scripted(Vec::<String>::new());
        assert_eq!(sr_retrieve_rules(&["hi".into()], "", p.as_ref(), "m").unwrap(), Vec::<String>::new());
        assert_eq!(p.calls(), 0);
    }

    #[test]
    fn rejected_call_is_revised_once() {
        let bad = ToolCall::new("exchange_item", json!({"order_id": "o3", "item_id": "kettle-steel", "new_item_id": "kettle-black"}));
        let assistant = scripted([
            ChatMessage::assistant_tool_calls(vec![bad.clone()]),
            ChatMessage::assistant("Order o3 has shipped, so it cannot be exchanged yet."),
        ]);
        let retriever = scripted(["- only delivered orders can be exchanged"]);
        let verifier = scripted(["Verdict: REJECTED\nJustification: o3 is shipped\nViolated: only delivered orders can be exchanged"]);
        let providers = AgentProviders {
            assistant: assistant.clone(),
            constraints: assistant.clone(),
            tool_suggester: assistant.clone(),
            retriever: retriever.clone(),
            verifier: verifier.clone(),
        };
        let mut sr = SelfReflectionAgent::new(&domain(), providers, &StrategyConfig::default());
        sr.observe_user("exchange the kettle in o3 for the black one").unwrap();
        let d = sr.decide().unwrap();
        assert!(matches!(d.action, AgentAction::Respond { .. }));
        assert!(matches!(&d.events[0], StrategyEvent::Reflection { verdict, .. } if !verdict.approved));
        assert_eq!(sr.verifications(), 1);
        assert_eq!((assistant.calls(), retriever.calls(), verifier.calls()), (2, 1, 1));
        assert!(!sr.context().history.iter().any(|m| m.calls().contains(&bad)));
    }

    #[test]
    fn approved_call_goes_through() {
        let ok = ToolCall::new("get_order", json!({"order_id": "o1"}));
        let assistant = scripted([ChatMessage::assistant_tool_calls(vec![ok.clone()])]);
        let mut providers = AgentProviders::shared(assistant);
        providers.retriever = scripted(["None"]);
        providers.verifier = scripted(["Verdict: APPROVED\nJustification: read-only"]);
        let mut sr = SelfReflectionAgent::new(&domain(), providers, &StrategyConfig::default());
        sr.observe_user("status of o1").unwrap();
        assert!(matches!(sr.decide().unwrap().action, AgentAction::ToolCall(c) if c.name == "get_order"));
    }
}
