//! Prompt templates with `{{name}}` placeholders.

use std::collections::BTreeMap;
use std::path::Path;

pub const TEMPLATE_NAMES: [&str; 5] = ["cp_propose", "sp_discuss", "resident_needs", "resident_opine", "cp_feedback"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} has no value for placeholder {name:?}")]
    Unfilled { template: String, name: String },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl Default for PromptSet {
    fn default() -> Self {
        let builtin = [
            ("cp_propose", include_str!("../../prompts/cp_propose.txt")),
            ("sp_discuss", include_str!("../../prompts/sp_discuss.txt")),
            ("resident_needs", include_str!("../../prompts/resident_needs.txt")),
            ("resident_opine", include_str!("../../prompts/resident_opine.txt")),
            ("cp_feedback", include_str!("../../prompts/cp_feedback.txt")),
        ];
        Self { templates: builtin.into_iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl PromptSet {
    /// Built-in templates, replaced by `<dir>/<name>.txt` where present.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut set = Self::default();
        for name in TEMPLATE_NAMES {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| PromptError::Io { path: path.display().to_string(), message: e.to_string() })?;
                set.templates.insert(name.to_string(), text);
            }
        }
        Ok(set)
    }

    pub fn template(&self, name: &str) -> Option<&str> {
        self.templates.get(name).map(String::as_str)
    }

    /// Substitute every placeholder; a placeholder without a value is an error.
    pub fn render(&self, name: &str, vars: &[(&str, String)]) -> Result<String, PromptError> {
        let template = self.template(name).ok_or_else(|| PromptError::UnknownTemplate(name.into()))?;
        let mut out = String::with_capacity(template.len() * 2);
        let mut rest = template;
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            let Some(end) = after.find("}}") else {
                out.push_str(&rest[start..]);
                rest = "";
                break;
            };
            let key = after[..end].trim();
            let value = vars
                .iter()
                .find(|(k, _)| *k == key)
                .ok_or_else(|| PromptError::Unfilled { template: name.into(), name: key.into() })?;
            out.push_str(&value.1);
            rest = &after[end + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}
