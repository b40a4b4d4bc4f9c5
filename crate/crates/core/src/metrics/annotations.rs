//! Human-supplied error annotations over recorded trajectories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::runner::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    UserInstructionHallucination,
    AgentHallucination,
    DomainPolicyViolation,
    ContextualMisinterpretation,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 4] = [
        ErrorCategory::UserInstructionHallucination,
        ErrorCategory::AgentHallucination,
        ErrorCategory::DomainPolicyViolation,
        ErrorCategory::ContextualMisinterpretation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::UserInstructionHallucination => "user_instruction_hallucination",
            ErrorCategory::AgentHallucination => "agent_hallucination",
            ErrorCategory::DomainPolicyViolation => "domain_policy_violation",
            ErrorCategory::ContextualMisinterpretation => "contextual_misinterpretation",
        }
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ErrorCategory {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s.trim())
            .ok_or_else(|| AnnotationError::UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub task_id: String,
    pub trial: usize,
    pub category: ErrorCategory,
    /// Index into the trajectory's event list.
    pub event: usize,
    #[serde(default)]
    pub note: String,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error(
        "unknown category \"{0}\" (expected one of: user_instruction_hallucination, agent_hallucination, domain_policy_violation, contextual_misinterpretation)"
    )]
    UnknownCategory(String),
    #[error("no trajectory for task \"{task}\" trial {trial}")]
    NoSuchTrajectory { task: String, trial: usize },
    #[error("event {event} is outside trajectory {task}/{trial} ({len} events)")]
    EventOutOfRange {
        task: String,
        trial: usize,
        event: usize,
        len: usize,
    },
    #[error("annotation store: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation store line {line}: {message}")]
    Corrupt { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AnnotationStore {
    pub annotations: Vec<ErrorAnnotation>,
}

impl AnnotationStore {
    pub fn len(&self) -> usize {
        self.annotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.annotations.is_empty()
    }

    pub fn by_category(&self, category: ErrorCategory) -> impl Iterator<Item = &ErrorAnnotation> {
        self.annotations.iter().filter(move |a| a.category == category)
    }

    pub fn by_task<'a>(&'a self, task_id: &'a str) -> impl Iterator<Item = &'a ErrorAnnotation> {
        self.annotations.iter().filter(move |a| a.task_id == task_id)
    }

    /// Counts for all four categories, zeros included.
    pub fn histogram(&self) -> BTreeMap<ErrorCategory, usize> {
        let mut counts: BTreeMap<ErrorCategory, usize> = ErrorCategory::ALL.into_iter().map(|c| (c, 0)).collect();
        for a in &self.annotations {
            *counts.entry(a.category).or_default() += 1;
        }
        counts
    }

    /// Reads a JSON-lines store; a missing file is an empty store.
    pub fn load(path: &Path) -> Result<Self, AnnotationError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(e) => return Err(e.into()),
        };
        let annotations = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| AnnotationError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { annotations })
    }

    /// Appends one record to a JSON-lines store.
    pub fn append_to(path: &Path, annotation: &ErrorAnnotation) -> Result<(), AnnotationError> {
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        let line = serde_json::to_string(annotation).expect("annotation serializes");
        writeln!(file, "{line}")?;
        Ok(())
    }
}

/// Validates the reference against `trajectories` and appends.
pub fn annotate_error(
    store: &mut AnnotationStore,
    annotation: ErrorAnnotation,
    trajectories: &[Trajectory],
) -> Result<(), AnnotationError> {
    let t = trajectories
        .iter()
        .find(|t| t.task_id == annotation.task_id && t.trial == annotation.trial)
        .ok_or_else(|| AnnotationError::NoSuchTrajectory {
            task: annotation.task_id.clone(),
            trial: annotation.trial,
        })?;
    if annotation.event >= t.events.len() {
        return Err(AnnotationError::EventOutOfRange {
            task: annotation.task_id,
            trial: annotation.trial,
            event: annotation.event,
            len: t.events.len(),
        });
    }
    store.annotations.push(annotation);
    Ok(())
}
