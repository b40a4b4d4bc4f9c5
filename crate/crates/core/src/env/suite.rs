//! Task-suite documents: `{ domain, policy?, tools, initial_db?, tasks }`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::db::{DbDigest, DomainDb};
use super::tools::ToolSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskAnnotations {
    #[serde(default)]
    pub gt_error: bool,
    #[serde(default)]
    pub ui_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Task {
    pub id: String,
    /// Latent user script; only the user simulator sees it.
    pub instruction: String,
    pub initial_db: DomainDb,
    pub gold_db_digest: DbDigest,
    pub required_outputs: Vec<String>,
    pub annotations: TaskAnnotations,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskSuite {
    pub domain: String,
    pub policy: Option<String>,
    pub tools: Vec<ToolSpec>,
    pub tasks: Vec<Task>,
}

impl TaskSuite {
    pub fn task(&self, id: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("duplicate task id \"{0}\"")]
    DuplicateTask(String),
    #[error("duplicate tool name \"{0}\"")]
    DuplicateTool(String),
    #[error("task \"{task}\": malformed gold_db_digest: {reason}")]
    BadDigest { task: String, reason: String },
    #[error("task \"{task}\": {reason}")]
    InvalidTask { task: String, reason: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    domain: String,
    #[serde(default)]
    policy: Option<String>,
    #[serde(default)]
    tools: Vec<ToolSpec>,
    #[serde(default)]
    initial_db: Option<DomainDb>,
    #[serde(default)]
    tasks: Vec<RawTask>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: String,
    instruction: String,
    #[serde(default)]
    initial_db: Option<DomainDb>,
    gold_db_digest: String,
    #[serde(default)]
    required_outputs: Vec<String>,
    #[serde(default)]
    annotations: TaskAnnotations,
}

pub fn load_task_suite(path: impl AsRef<Path>) -> Result<TaskSuite, SuiteError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_task_suite(&text)
}

/// Parses and validates a suite. Task order is preserved.
pub fn parse_task_suite(text: &str) -> Result<TaskSuite, SuiteError> {
    let raw: RawSuite = parse_json(text)?;

    let mut tool_names = HashSet::new();
    for tool in &raw.tools {
        if !tool_names.insert(tool.name.as_str()) {
            return Err(SuiteError::DuplicateTool(tool.name.clone()));
        }
    }

    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(raw.tasks.len());
    for t in raw.tasks {
        if !seen.insert(t.id.clone()) {
            return Err(SuiteError::DuplicateTask(t.id));
        }
        let gold_db_digest = t.gold_db_digest.parse().map_err(|e: super::db::DigestParseError| {
            SuiteError::BadDigest {
                task: t.id.clone(),
                reason: e.to_string(),
            }
        })?;
        let initial_db = t
            .initial_db
            .or_else(|| raw.initial_db.clone())
            .ok_or_else(|| SuiteError::InvalidTask {
                task: t.id.clone(),
                reason: "no initial_db on the task or the suite".into(),
            })?;
        if let Some(missing) = initial_db
            .mutable_collections
            .iter()
            .find(|c| !initial_db.collections.contains_key(*c))
        {
            return Err(SuiteError::InvalidTask {
                task: t.id.clone(),
                reason: format!("mutable collection \"{missing}\" does not exist"),
            });
        }
        tasks.push(Task {
            id: t.id,
            instruction: t.instruction,
            initial_db,
            gold_db_digest,
            required_outputs: t.required_outputs,
            annotations: t.annotations,
        });
    }

    Ok(TaskSuite {
        domain: raw.domain,
        policy: raw.policy,
        tools: raw.tools,
        tasks,
    })
}

/// JSON parse with the failing field path attached to the error.
pub(crate) fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, SuiteError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        SuiteError::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}
