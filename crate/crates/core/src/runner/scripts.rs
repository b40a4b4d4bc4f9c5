//! Provider factories: per-trial scripted providers from a script file,
//! or one shared live provider.
//!
//! ```json
//! {"scripts": [{"task": "t1", "strategy": "react",
//!               "variants": [{"assistant": {...}, "user": {...}}],
//!               "assign": [0, 0, 1]}]}
//! ```
//!
//! `assign[trial]` picks the variant for a trial; without it the trial
//! seed does. Roles a variant leaves out fail when called.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{ProviderFactory, TrialProviders};
use crate::env::suite::parse_json;
use crate::env::{SuiteError, Task};
use crate::gateway::{make_scripted_provider, ChatProvider, ProviderScript, UnscriptedProvider};
use crate::strategies::{AgentProviders, StrategyKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialScript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assistant: Option<ProviderScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user: Option<ProviderScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ProviderScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_suggester: Option<ProviderScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriever: Option<ProviderScript>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verifier: Option<ProviderScript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    pub task: String,
    /// Applies to every strategy when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<StrategyKind>,
    pub variants: Vec<TrialScript>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub assign: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptFile {
    pub scripts: Vec<TaskScript>,
}

impl ScriptFile {
    pub fn load(path: &Path) -> Result<Self, SuiteError> {
        let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SuiteError> {
        let file: ScriptFile = parse_json(text)?;
        file.check().map_err(|reason| SuiteError::InvalidTask {
            task: reason.0,
            reason: reason.1,
        })?;
        Ok(file)
    }

    fn check(&self) -> Result<(), (String, String)> {
        let mut seen = std::collections::HashSet::new();
        for (i, s) in self.scripts.iter().enumerate() {
            let fail = |m: String| Err((s.task.clone(), format!("scripts[{i}]: {m}")));
            if !seen.insert((s.task.as_str(), s.strategy)) {
                return fail("duplicate task/strategy entry".into());
            }
            if s.variants.is_empty() {
                return fail("needs at least one variant".into());
            }
            if let Some(bad) = s.assign.iter().find(|&&v| v >= s.variants.len()) {
                return fail(format!("assign names variant {bad}, but there are {}", s.variants.len()));
            }
            for (j, v) in s.variants.iter().enumerate() {
                for script in v.roles().into_iter().flatten() {
                    if let Err(e) = make_scripted_provider(script.clone()) {
                        return fail(format!("variants[{j}]: {e}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Entry for a task; a strategy-specific one wins over a generic one.
    pub fn lookup(&self, task: &str, strategy: StrategyKind) -> Option<&TaskScript> {
        let mut generic = None;
        for s in self.scripts.iter().filter(|s| s.task == task) {
            match s.strategy {
                Some(k) if k == strategy => return Some(s),
                None => generic = Some(s),
                _ => {}
            }
        }
        generic
    }
}

impl TrialScript {
    fn roles(&self) -> [Option<&ProviderScript>; 6] {
        [
            self.assistant.as_ref(),
            self.user.as_ref(),
            self.constraints.as_ref(),
            self.tool_suggester.as_ref(),
            self.retriever.as_ref(),
            self.verifier.as_ref(),
        ]
    }
}

fn provider(script: &Option<ProviderScript>) -> Result<Arc<dyn ChatProvider>, String> {
    Ok(match script {
        Some(s) => Arc::new(make_scripted_provider(s.clone()).map_err(|e| e.to_string())?),
        None => Arc::new(UnscriptedProvider),
    })
}

pub struct ScriptedProviders {
    pub file: ScriptFile,
}

impl ScriptedProviders {
    pub fn new(file: ScriptFile) -> Self {
        Self { file }
    }
}

impl ProviderFactory for ScriptedProviders {
    fn providers(&self, task: &Task, strategy: StrategyKind, trial: usize, seed: u64) -> Result<TrialProviders, String> {
        let entry = self
            .file
            .lookup(&task.id, strategy)
            .ok_or_else(|| format!("script file has no entry for strategy {strategy}"))?;
        let index = entry
            .assign
            .get(trial)
            .copied()
            .unwrap_or((seed % entry.variants.len() as u64) as usize);
        let v = &entry.variants[index];
        Ok(TrialProviders {
            agents: AgentProviders {
                assistant: provider(&v.assistant)?,
                constraints: provider(&v.constraints)?,
                tool_suggester: provider(&v.tool_suggester)?,
                retriever: provider(&v.retriever)?,
                verifier: provider(&v.verifier)?,
            },
            user: provider(&v.user)?,
        })
    }
}

/// Every role, the user included, shares one provider.
pub struct LiveProviders {
    pub provider: Arc<dyn ChatProvider>,
}

impl ProviderFactory for LiveProviders {
    fn providers(&self, _: &Task, _: StrategyKind, _: usize, _: u64) -> Result<TrialProviders, String> {
        Ok(TrialProviders {
            agents: AgentProviders::shared(self.provider.clone()),
            user: self.provider.clone(),
        })
    }
}
