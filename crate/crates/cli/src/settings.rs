//! Flat key/value settings shared by the config file and the command line.
//! Keys in the file are the long flag names; flags win over the file.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_cache: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_endpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub llm_model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests_per_minute: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompts: Option<PathBuf>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pop: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PathBuf>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vulnerable_each: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<String>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_feedback_iterations: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sp_max_changes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opinion_sample: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discussion_passes: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub_community_order: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_discussion: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_initial: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parallelism: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequential: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_agent: Option<bool>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub host: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub port: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub origin: Option<String>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),+ $(,)?) => {
        Settings { $($f: $top.$f.or($base.$f)),+ }
    };
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }

    /// Values set in `top` replace those in `self`.
    pub fn overlay(self, top: Settings) -> Settings {
        overlay!(
            self, top, seed, out, llm_cache, backend, llm_endpoint, llm_model, requests_per_minute, prompts, template,
            rows, cols, scenario, pop, plan, n, vulnerable_each, stats, method, methods, max_feedback_iterations,
            sp_max_changes, opinion_sample, discussion_passes, sub_community_order, skip_discussion, check_initial,
            parallelism, sequential, timing, per_agent, host, port, origin,
        )
    }
}

/// `true` flags become `Some(true)`; an absent flag leaves the file value.
pub fn flag(b: bool) -> Option<bool> {
    b.then_some(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file: Settings = toml::from_str("seed = 7\nbackend = \"llm\"\nmethods = [\"gsca\"]\nskip-discussion = true\n").unwrap();
        let cli = Settings { seed: Some(9), ..Settings::default() };
        let merged = file.overlay(cli);
        assert_eq!(merged.seed, Some(9));
        assert_eq!(merged.backend.as_deref(), Some("llm"));
        assert_eq!(merged.methods, Some(vec!["gsca".to_string()]));
        assert_eq!(merged.skip_discussion, Some(true));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Settings>("sed = 1\n").is_err());
    }
}
