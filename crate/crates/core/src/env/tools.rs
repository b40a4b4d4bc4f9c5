use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::db::DomainDb;
use super::{Observation, ToolOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    pub fn accepts(self, value: &Value) -> bool {
        match self {
            ParamType::String => value.is_string(),
            ParamType::Integer => value.is_i64() || value.is_u64(),
            ParamType::Number => value.is_number(),
            ParamType::Boolean => value.is_boolean(),
            ParamType::Array => value.is_array(),
            ParamType::Object => value.is_object(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    #[serde(default = "default_true")]
    pub required: bool,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default)]
    pub mutating: bool,
}

impl ToolSpec {
    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }

    /// Checks `args` against the parameter schema, naming the first offending argument.
    pub fn validate_args(&self, args: &Map<String, Value>) -> Result<(), ArgError> {
        for param in &self.params {
            match args.get(&param.name) {
                None if param.required => return Err(ArgError::Missing(param.name.clone())),
                None => {}
                Some(v) if !param.kind.accepts(v) => {
                    return Err(ArgError::WrongType {
                        name: param.name.clone(),
                        expected: param.kind,
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !self.params.iter().any(|p| &p.name == *k)) {
            return Err(ArgError::Unexpected(extra.clone()));
        }
        Ok(())
    }

    /// JSON-schema rendering used in chat-completion `tools` payloads.
    pub fn json_schema(&self) -> Value {
        let mut properties = Map::new();
        for p in &self.params {
            let mut prop = Map::new();
            prop.insert("type".into(), Value::String(p.kind.as_str().into()));
            if !p.description.is_empty() {
                prop.insert("description".into(), Value::String(p.description.clone()));
            }
            properties.insert(p.name.clone(), Value::Object(prop));
        }
        let required: Vec<Value> = self
            .required_params()
            .map(|p| Value::String(p.name.clone()))
            .collect();
        serde_json::json!({
            "type": "object",
            "properties": properties,
            "required": required,
            "additionalProperties": false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ArgError {
    #[error("missing required argument \"{0}\"")]
    Missing(String),
    #[error("unexpected argument \"{0}\"")]
    Unexpected(String),
    #[error("argument \"{name}\" must be of type {}", expected.as_str())]
    WrongType { name: String, expected: ParamType },
}

impl ArgError {
    pub fn arg_name(&self) -> &str {
        match self {
            ArgError::Missing(n) | ArgError::Unexpected(n) => n,
            ArgError::WrongType { name, .. } => name,
        }
    }
}

/// An agent's invocation of a declared tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    #[serde(default)]
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(name: impl Into<String>, arguments: Value) -> Self {
        let arguments = match arguments {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self {
            id: String::new(),
            name: name.into(),
            arguments,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, Value::Object(self.arguments.clone()))
    }
}

/// A tool body. Domain errors come back as plain messages.
pub type ToolFn = Arc<dyn Fn(&mut DomainDb, &Map<String, Value>) -> Result<Value, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate tool name \"{0}\"")]
    Duplicate(String),
    #[error("tool \"{0}\" is declared but has no implementation in this domain")]
    Unbound(String),
}

/// Declared tool schemas bound to their implementations by name.
#[derive(Clone, Default)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
    impls: HashMap<String, ToolFn>,
    handoff: Option<String>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolRegistry")
            .field("tools", &self.specs.iter().map(|s| &s.name).collect::<Vec<_>>())
            .field("handoff", &self.handoff)
            .finish()
    }
}

impl ToolRegistry {
    pub fn bind(
        specs: Vec<ToolSpec>,
        implementations: &HashMap<String, ToolFn>,
    ) -> Result<Self, RegistryError> {
        let mut impls = HashMap::new();
        for spec in &specs {
            let f = implementations
                .get(&spec.name)
                .ok_or_else(|| RegistryError::Unbound(spec.name.clone()))?;
            if impls.insert(spec.name.clone(), f.clone()).is_some() {
                return Err(RegistryError::Duplicate(spec.name.clone()));
            }
        }
        Ok(Self {
            specs,
            impls,
            handoff: None,
        })
    }

    /// Marks the tool whose successful call hands the conversation to a human.
    pub fn with_handoff(mut self, name: impl Into<String>) -> Self {
        let name = name.into();
        self.handoff = self.impls.contains_key(&name).then_some(name);
        self
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.impls.contains_key(name)
    }

    pub fn handoff_tool(&self) -> Option<&str> {
        self.handoff.as_deref()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.specs.iter().map(|s| s.name.as_str())
    }

    /// Unknown tool or schema mismatch, as a message naming the culprit.
    pub fn check_call(&self, call: &ToolCall) -> Result<&ToolSpec, String> {
        let spec = self
            .spec(&call.name)
            .ok_or_else(|| format!("unknown tool \"{}\"", call.name))?;
        spec.validate_args(&call.arguments).map_err(|e| e.to_string())?;
        Ok(spec)
    }
}

/// Executes one tool call against `db`.
///
/// Every failure path returns the input database unchanged, and tools
/// declared non-mutating can never alter it.
pub fn execute_tool(db: &DomainDb, registry: &ToolRegistry, call: &ToolCall) -> (DomainDb, Observation) {
    let spec = match registry.check_call(call) {
        Ok(spec) => spec,
        Err(msg) => return (db.clone(), Observation::ToolResult(ToolOutcome::Error(msg))),
    };
    let body = &registry.impls[&spec.name];
    let mut scratch = db.clone();
    match body(&mut scratch, &call.arguments) {
        Ok(payload) => {
            let next = if spec.mutating { scratch } else { db.clone() };
            (next, Observation::ToolResult(ToolOutcome::Payload(payload)))
        }
        Err(msg) => (db.clone(), Observation::ToolResult(ToolOutcome::Error(msg))),
    }
}
