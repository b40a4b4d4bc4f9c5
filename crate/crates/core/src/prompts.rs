//! Versioned prompt templates with `{name}` placeholders.
//!
//! Template files live in `prompts/`; each starts with a `version: N`
//! line and a `---` separator.

use std::sync::LazyLock;

pub struct Template {
    pub name: &'static str,
    pub version: u32,
    body: &'static str,
}

impl Template {
    fn parse(name: &'static str, source: &'static str) -> Self {
        let (header, body) = source
            .split_once("\n---\n")
            .unwrap_or_else(|| panic!("template {name} has no header separator"));
        let version = header
            .trim()
            .strip_prefix("version:")
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_else(|| panic!("template {name} has no version"));
        Self {
            name,
            version,
            body: body.trim_end(),
        }
    }

    /// Placeholder names present in the body, in order of appearance.
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        let mut rest = self.body;
        while let Some(start) = rest.find('{') {
            let after = &rest[start + 1..];
            match after.find('}') {
                Some(end) if is_ident(&after[..end]) => {
                    if !out.contains(&&after[..end]) {
                        out.push(&after[..end]);
                    }
                    rest = &after[end + 1..];
                }
                _ => rest = after,
            }
        }
        out
    }

    pub fn render(&self, values: &[(&str, &str)]) -> String {
        let mut out = self.body.to_string();
        for (key, value) in values {
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out
    }
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b == b'_')
}

macro_rules! template {
    ($ident:ident, $file:literal) => {
        pub static $ident: LazyLock<Template> =
            LazyLock::new(|| Template::parse($file, include_str!(concat!("../prompts/", $file, ".txt"))));
    };
}

template!(USER_SYSTEM, "user_system");
template!(REACT_SYSTEM, "react_system");
template!(FACT_SYSTEM, "fact_system");
template!(FC_SYSTEM, "fc_system");
template!(IRMA_CONSTRAINTS, "irma_constraints");
template!(IRMA_TOOLS, "irma_tools");
template!(SR_RETRIEVER, "sr_retriever");
template!(SR_VERIFIER, "sr_verifier");
template!(ACTION_REPAIR, "action_repair");

pub fn all() -> [&'static Template; 9] {
    [
        &USER_SYSTEM,
        &REACT_SYSTEM,
        &FACT_SYSTEM,
        &FC_SYSTEM,
        &IRMA_CONSTRAINTS,
        &IRMA_TOOLS,
        &SR_RETRIEVER,
        &SR_VERIFIER,
        &ACTION_REPAIR,
    ]
}
