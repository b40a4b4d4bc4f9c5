//! Domains bind tool implementations to the names a suite file declares.

pub mod mini_retail;

use std::collections::HashMap;

use crate::env::tools::{RegistryError, ToolFn, ToolRegistry, ToolSpec};

#[derive(Clone)]
pub struct Domain {
    pub name: &'static str,
    pub policy: &'static str,
    pub implementations: HashMap<String, ToolFn>,
    /// Tool whose successful result must precede any other tool call.
    pub identity_tool: Option<&'static str>,
    pub handoff_tool: Option<&'static str>,
}

impl Domain {
    pub fn registry(&self, specs: Vec<ToolSpec>) -> Result<ToolRegistry, RegistryError> {
        let registry = ToolRegistry::bind(specs, &self.implementations)?;
        Ok(match self.handoff_tool {
            Some(name) => registry.with_handoff(name),
            None => registry,
        })
    }
}

pub fn lookup(name: &str) -> Option<Domain> {
    match name {
        mini_retail::NAME => Some(mini_retail::domain()),
        _ => None,
    }
}

pub fn known_domains() -> &'static [&'static str] {
    &[mini_retail::NAME]
}
