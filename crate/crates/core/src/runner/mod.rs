//! Trial loop and experiment driver.
//!
//! A trial is one conversation: greeting, then user turn -> strategy
//! decisions -> tool executions until the user stops, a transfer is
//! accepted, a strategy fails, or a cap is hit. The reward is computed on
//! whatever state the episode ended in.

pub mod log;
pub mod scripts;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{self, Domain};
use crate::env::{compute_reward, step, AgentAction, EnvState, Observation, Task, TaskSuite, TerminationCause};
use crate::gateway::ChatProvider;
use crate::metrics::RewardMatrix;
use crate::strategies::{build_strategy, AgentProviders, DomainContext, StrategyConfig, StrategyError, StrategyEvent, StrategyKind};
use crate::usersim::{FaultProfile, LlmUserSimulator};

pub use log::{read_trajectories, write_trajectories, LogError};
pub use scripts::{LiveProviders, ScriptFile, ScriptedProviders, TaskScript, TrialScript};

pub const GREETING: &str = "Hi! How can I help you today?";
pub const DEFAULT_MAX_TURNS: usize = 30;
pub const DEFAULT_MAX_ACTIONS_PER_TURN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    User,
    Assistant,
    ToolCall,
    ToolResult,
    Reformulation,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub kind: EventKind,
    pub payload: Value,
    /// Milliseconds since the trial started.
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub strategy: StrategyKind,
    pub trial: usize,
    pub seed: u64,
    pub events: Vec<TrajectoryEvent>,
    pub turn_count: usize,
    pub terminal: TerminationCause,
    pub reward: u8,
    /// Ended by a provider failure; left out of reward matrices by default.
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Trajectory {
    pub fn user_events(&self) -> impl Iterator<Item = (usize, &TrajectoryEvent)> {
        self.events.iter().enumerate().filter(|(_, e)| e.kind == EventKind::User)
    }

    /// Event index of the `n`-th (1-based) user event.
    pub fn user_event_index(&self, n: usize) -> Option<usize> {
        self.user_events().nth(n.checked_sub(1)?).map(|(i, _)| i)
    }

    pub fn normalize_timestamps(&mut self) {
        for e in &mut self.events {
            e.timestamp_ms = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub max_turns: usize,
    pub n_trials: usize,
    pub parallelism: usize,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub agent: StrategyConfig,
    pub user_model: String,
    /// Keyed by task id.
    pub faults: BTreeMap<String, FaultProfile>,
    /// Consecutive agent actions allowed between two user turns.
    pub max_actions_per_turn: usize,
    /// Count provider-failure trials as failures instead of dropping them.
    pub count_aborted: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            max_turns: DEFAULT_MAX_TURNS,
            n_trials: 1,
            parallelism: 1,
            seed: 0,
            strategy: StrategyKind::React,
            agent: StrategyConfig::default(),
            user_model: "user-simulator".into(),
            faults: BTreeMap::new(),
            max_actions_per_turn: DEFAULT_MAX_ACTIONS_PER_TURN,
            count_aborted: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        let bad = |m: &str| Err(RunError::Config(m.to_string()));
        if self.max_turns == 0 {
            return bad("max_turns must be >= 1");
        }
        if self.n_trials == 0 {
            return bad("n_trials must be >= 1");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1");
        }
        if self.max_actions_per_turn == 0 {
            return bad("max_actions_per_turn must be >= 1");
        }
        for (task, fault) in &self.faults {
            fault
                .validate()
                .map_err(|e| RunError::Config(format!("faults.{task}: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("unknown domain \"{0}\"")]
    UnknownDomain(String),
    #[error("suite tools do not match the domain: {0}")]
    Registry(String),
    #[error("no providers for task \"{task}\" trial {trial}: {message}")]
    Providers { task: String, trial: usize, message: String },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Clone)]
pub struct TrialProviders {
    pub agents: AgentProviders,
    pub user: Arc<dyn ChatProvider>,
}

/// Supplies fresh providers per trial, so no provider state crosses trials.
pub trait ProviderFactory: Sync {
    fn providers(&self, task: &Task, strategy: StrategyKind, trial: usize, seed: u64) -> Result<TrialProviders, String>;
}

/// `seed ^ trial ^ fnv1a(task_id)`.
pub fn trial_seed(seed: u64, trial: usize, task_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task_id.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ trial as u64 ^ h
}

/// Domain context for a suite: its tools bound to the named domain.
pub fn domain_context(suite: &TaskSuite) -> Result<(Domain, DomainContext), RunError> {
    let domain = domain::lookup(&suite.domain).ok_or_else(|| RunError::UnknownDomain(suite.domain.clone()))?;
    let tools = domain
        .registry(suite.tools.clone())
        .map_err(|e| RunError::Registry(e.to_string()))?;
    let ctx = DomainContext {
        policy_doc: suite.policy.clone().unwrap_or_else(|| domain.policy.to_string()),
        tools,
        identity_tool: domain.identity_tool.map(str::to_string),
    };
    Ok((domain, ctx))
}

struct Recorder {
    start: Instant,
    events: Vec<TrajectoryEvent>,
}

impl Recorder {
    fn push(&mut self, kind: EventKind, payload: Value) {
        let timestamp_ms = self.start.elapsed().as_millis() as u64;
        self.events.push(TrajectoryEvent {
            kind,
            payload,
            timestamp_ms,
        });
    }

    fn strategy_events(&mut self, events: Vec<StrategyEvent>) -> Map {
        let mut notes = Map::new();
        let mut repairs = Vec::new();
        for e in events {
            match e {
                StrategyEvent::Reformulation { ablation, rendered } => {
                    self.push(EventKind::Reformulation, json!({"ablation": ablation, "rendered": rendered}))
                }
                StrategyEvent::Reflection { planned, rules, verdict } => self.push(
                    EventKind::Reflection,
                    json!({"planned": planned, "rules": rules, "verdict": verdict}),
                ),
                StrategyEvent::FollowUp { intercepted, reason } => {
                    notes.insert("follow_up".into(), json!({"intercepted": intercepted, "reason": reason}));
                }
                StrategyEvent::Repair { error } => repairs.push(Value::String(error)),
            }
        }
        if !repairs.is_empty() {
            notes.insert("repairs".into(), Value::Array(repairs));
        }
        notes
    }
}

type Map = serde_json::Map<String, Value>;

fn with_notes(mut payload: Map, notes: Map) -> Value {
    payload.extend(notes);
    Value::Object(payload)
}

fn failure_cause(e: &StrategyError) -> TerminationCause {
    if e.is_provider_failure() {
        TerminationCause::ProviderFailure
    } else {
        TerminationCause::StrategyError
    }
}

/// Runs one conversation to termination and scores it.
pub fn run_trial(
    task: &Task,
    domain: &DomainContext,
    providers: TrialProviders,
    config: &RunConfig,
    trial: usize,
) -> Trajectory {
    let seed = trial_seed(config.seed, trial, &task.id);
    let fault = config.faults.get(&task.id).cloned().unwrap_or_default();
    let fault_turn = fault.enabled.then_some(fault.deviation_turn);
    let mut user = LlmUserSimulator::new(task.instruction.clone(), providers.user)
        .with_fault(fault)
        .with_model(config.user_model.clone());
    let mut strategy = build_strategy(config.strategy, domain, providers.agents, &config.agent);
    let mut env = EnvState::new(task.initial_db.clone());
    let mut rec = Recorder {
        start: Instant::now(),
        events: Vec::new(),
    };
    let mut error = None;

    strategy.observe_greeting(GREETING);
    rec.push(EventKind::Assistant, json!({"text": GREETING}));
    let mut obs = step(&mut env, &domain.tools, &AgentAction::respond(GREETING), &mut user)
        .expect("fresh episode accepts the greeting");
    let mut actions_this_turn = 0;
    let mut pending_call: Option<crate::env::ToolCall> = None;

    loop {
        match &obs {
            Observation::UserUtterance(text) => {
                let mut payload = json!({"text": text});
                if fault_turn == Some(env.turn_count) {
                    payload["injected"] = Value::Bool(true);
                }
                rec.push(EventKind::User, payload);
                actions_this_turn = 0;
                match strategy.observe_user(text) {
                    Ok(events) => {
                        rec.strategy_events(events);
                    }
                    Err(e) => {
                        env.finish(failure_cause(&e));
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            Observation::ToolResult(outcome) => {
                let call = pending_call.take().expect("tool results follow tool calls");
                rec.push(
                    EventKind::ToolResult,
                    json!({"call_id": call.id, "name": call.name, "result": outcome}),
                );
                strategy.observe_tool_result(&call, outcome);
                if env.done {
                    break;
                }
            }
            Observation::Terminated(cause) => {
                if *cause == TerminationCause::UserStop {
                    let raw = env.transcript.last().map(|e| e.text.clone()).unwrap_or_default();
                    rec.push(EventKind::User, json!({"text": raw}));
                }
                break;
            }
        }

        if actions_this_turn >= config.max_actions_per_turn {
            env.finish(TerminationCause::MaxActions);
            break;
        }
        let decision = match strategy.decide() {
            Ok(d) => d,
            Err(e) => {
                env.finish(failure_cause(&e));
                error = Some(e.to_string());
                break;
            }
        };
        actions_this_turn += 1;
        let notes = rec.strategy_events(decision.events);
        match &decision.action {
            AgentAction::Respond { text } => {
                if env.turn_count >= config.max_turns {
                    env.finish(TerminationCause::MaxTurns);
                    break;
                }
                let mut payload = Map::new();
                payload.insert("text".into(), Value::String(text.clone()));
                rec.push(EventKind::Assistant, with_notes(payload, notes));
            }
            AgentAction::ToolCall(call) => {
                let mut payload = Map::new();
                payload.insert("call".into(), serde_json::to_value(call).expect("call serializes"));
                rec.push(EventKind::ToolCall, with_notes(payload, notes));
                pending_call = Some(call.clone());
            }
        }
        obs = step(&mut env, &domain.tools, &decision.action, &mut user).expect("loop stops once the episode is done");
    }

    let terminal = env.terminal.unwrap_or(TerminationCause::StrategyError);
    let reward = compute_reward(&env.db, &env.transcript, task);
    let user_events = rec.events.iter().filter(|e| e.kind == EventKind::User).count();
    debug_assert_eq!(user_events, env.turn_count);
    Trajectory {
        task_id: task.id.clone(),
        strategy: config.strategy,
        trial,
        seed,
        events: rec.events,
        turn_count: env.turn_count,
        terminal,
        reward,
        aborted: terminal == TerminationCause::ProviderFailure,
        error,
    }
}

/// Runs every task `n_trials` times on a pool of `parallelism` workers.
/// Trajectories come back ordered by (task id, trial).
pub fn run_experiment(
    suite: &TaskSuite,
    factory: &dyn ProviderFactory,
    config: &RunConfig,
) -> Result<(RewardMatrix, Vec<Trajectory>), RunError> {
    config.validate()?;
    let (_, ctx) = domain_context(suite)?;
    let mut jobs = Vec::with_capacity(suite.tasks.len() * config.n_trials);
    for task in &suite.tasks {
        for trial in 0..config.n_trials {
            let seed = trial_seed(config.seed, trial, &task.id);
            let providers = factory
                .providers(task, config.strategy, trial, seed)
                .map_err(|message| RunError::Providers {
                    task: task.id.clone(),
                    trial,
                    message,
                })?;
            jobs.push((task, trial, providers));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let mut trajectories: Vec<Trajectory> = pool.install(|| {
        jobs.into_par_iter()
            .map(|(task, trial, providers)| run_trial(task, &ctx, providers, config, trial))
            .collect()
    });
    trajectories.sort_by(|a, b| (a.task_id.as_str(), a.trial).cmp(&(b.task_id.as_str(), b.trial)));
    let mut matrix = RewardMatrix::from_trajectories(&trajectories, config.count_aborted);
    matrix.domain = Some(suite.domain.clone());
    matrix.strategy = Some(config.strategy.as_str().to_string());
    Ok((matrix, trajectories))
}
