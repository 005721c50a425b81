//! Declarative run configuration (TOML).
//!
//! ```toml
//! strategies = ["raw", "answer_first", "logic_first", "reflexive"]
//! parallelism = 4
//! unparsed_policy = "strict"
//! output_dir = "runs"
//!
//! [[models]]
//! provider_id = "openai"
//! model_name = "gpt-4o-mini"
//! endpoint_url = "https://api.openai.com/v1/chat/completions"
//!
//! [[datasets]]
//! name = "logiqa"
//! format = "logiqa_txt"
//! path = "data/logiqa_eval.txt"
//! limit = 1000
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.
//! API keys are never read from the config; see [`crate::providers::api_key_env_var`].

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::datasets::{DatasetDescriptor, FormatId};
use crate::prompts::PromptOrder;
use crate::providers::ModelSpec;
use crate::runner::UnparsedPolicy;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    provider_id: String,
    model_name: String,
    #[serde(default)]
    temperature: Option<f64>,
    #[serde(default)]
    max_tokens: Option<u32>,
    #[serde(default)]
    endpoint_url: Option<String>,
    #[serde(default)]
    request_timeout_s: Option<f64>,
    #[serde(default)]
    rate_limit_rps: Option<f64>,
    #[serde(default)]
    fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    name: String,
    format: FormatId,
    path: PathBuf,
    #[serde(default)]
    limit: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    strategies: Vec<PromptOrder>,
    #[serde(default)]
    parallelism: Option<usize>,
    #[serde(default)]
    unparsed_policy: Option<UnparsedPolicy>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    template_dir: Option<PathBuf>,
    #[serde(default)]
    cache_dir: Option<PathBuf>,
    #[serde(default)]
    markers_file: Option<PathBuf>,
    #[serde(default)]
    models: Vec<RawModel>,
    #[serde(default)]
    datasets: Vec<RawDataset>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub spec: ModelSpec,
    /// Scripted responses; required when `provider_id = "mock"`.
    pub fixture: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub models: Vec<ModelConfig>,
    pub datasets: Vec<DatasetDescriptor>,
    pub strategies: Vec<PromptOrder>,
    pub parallelism: usize,
    pub unparsed_policy: UnparsedPolicy,
    pub output_dir: PathBuf,
    pub template_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub markers_file: Option<PathBuf>,
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub limit: Option<usize>,
    pub parallelism: Option<usize>,
    pub unparsed_policy: Option<UnparsedPolicy>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            ConfigError::Parse { reason, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })
    }

    /// Parses TOML, resolving relative paths against `base`. Does not validate.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            reason: e.to_string(),
        })?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let models = raw
            .models
            .into_iter()
            .map(|m| {
                let mut spec = ModelSpec::new(m.provider_id, m.model_name);
                if let Some(t) = m.temperature {
                    spec.temperature = t;
                }
                if let Some(t) = m.max_tokens {
                    spec.max_tokens = t;
                }
                if let Some(u) = m.endpoint_url {
                    spec.endpoint_url = u;
                }
                if let Some(t) = m.request_timeout_s {
                    spec.request_timeout_s = t;
                }
                if let Some(r) = m.rate_limit_rps {
                    spec.rate_limit_rps = r;
                }
                ModelConfig {
                    spec,
                    fixture: m.fixture.map(resolve),
                }
            })
            .collect();
        let datasets = raw
            .datasets
            .into_iter()
            .map(|d| DatasetDescriptor::new(d.name, d.format, resolve(d.path), d.limit))
            .collect();
        Ok(Self {
            models,
            datasets,
            strategies: raw.strategies,
            parallelism: raw.parallelism.unwrap_or(4),
            unparsed_policy: raw.unparsed_policy.unwrap_or_default(),
            output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("runs"))),
            template_dir: raw.template_dir.map(resolve),
            cache_dir: raw.cache_dir.map(resolve),
            markers_file: raw.markers_file.map(resolve),
        })
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(limit) = o.limit {
            for d in &mut self.datasets {
                d.limit = limit;
            }
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(u) = o.unparsed_policy {
            self.unparsed_policy = u;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = dir.clone();
        }
    }

    pub fn strategy_set(&self) -> BTreeSet<PromptOrder> {
        self.strategies.iter().copied().collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.strategies.is_empty() {
            return invalid("strategies must not be empty".into());
        }
        let set = self.strategy_set();
        if set.contains(&PromptOrder::Reflexive)
            && !(set.contains(&PromptOrder::AnswerFirst) && set.contains(&PromptOrder::LogicFirst))
        {
            return invalid("strategy `reflexive` requires both `answer_first` and `logic_first`".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        if self.models.is_empty() {
            return invalid("at least one [[models]] entry is required".into());
        }
        if self.datasets.is_empty() {
            return invalid("at least one [[datasets]] entry is required".into());
        }
        let mut names = HashSet::new();
        for m in &self.models {
            m.spec
                .validate()
                .map_err(|e| ConfigError::Invalid(format!("model {}: {e}", m.spec.model_name)))?;
            if !names.insert(m.spec.model_name.as_str()) {
                return invalid(format!("duplicate model name `{}`", m.spec.model_name));
            }
            if m.spec.is_mock() && m.fixture.is_none() {
                return invalid(format!("mock model `{}` needs a `fixture` path", m.spec.model_name));
            }
            if !m.spec.is_mock() && m.spec.endpoint_url.is_empty() {
                return invalid(format!("model `{}` needs an `endpoint_url`", m.spec.model_name));
            }
        }
        let mut names = HashSet::new();
        for d in &self.datasets {
            if d.name.is_empty() || !names.insert(d.name.as_str()) {
                return invalid(format!("dataset names must be unique and nonempty (`{}`)", d.name));
            }
        }
        Ok(())
    }
}
