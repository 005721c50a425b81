use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{request_fingerprint, FinishReason, ModelResponse, ModelSpec, Provider, ProviderError, ProviderErrorKind};
use crate::prompts::{PromptOrder, RenderedPrompt};

#[derive(Debug, Error)]
pub enum MockError {
    #[error("mock fixture not found: {0}")]
    FileMissing(PathBuf),
    #[error("duplicate mock entry for ({0}, {1})")]
    DuplicateKey(String, PromptOrder),
    #[error("mock fixture line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One line of a mock fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockEntry {
    pub question_id: String,
    pub order: PromptOrder,
    pub text: String,
    #[serde(default = "stop", skip_serializing_if = "is_stop")]
    pub finish_reason: FinishReason,
}

fn stop() -> FinishReason {
    FinishReason::Stop
}

fn is_stop(f: &FinishReason) -> bool {
    *f == FinishReason::Stop
}

impl MockEntry {
    pub fn new(question_id: impl Into<String>, order: PromptOrder, text: impl Into<String>) -> Self {
        Self {
            question_id: question_id.into(),
            order,
            text: text.into(),
            finish_reason: FinishReason::Stop,
        }
    }
}

/// Scripted provider: `complete` is a lookup on `(question_id, order)`.
#[derive(Debug, Default)]
pub struct MockProvider {
    entries: BTreeMap<(String, PromptOrder), MockEntry>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn from_entries(entries: impl IntoIterator<Item = MockEntry>) -> Result<Self, MockError> {
        let mut map = BTreeMap::new();
        for entry in entries {
            let key = (entry.question_id.clone(), entry.order);
            if map.contains_key(&key) {
                return Err(MockError::DuplicateKey(key.0, key.1));
            }
            map.insert(key, entry);
        }
        Ok(Self {
            entries: map,
            calls: AtomicUsize::new(0),
        })
    }

    /// Loads a JSONL fixture of [`MockEntry`] lines.
    pub fn from_fixture(path: &Path) -> Result<Self, MockError> {
        let text = fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                MockError::FileMissing(path.to_path_buf())
            } else {
                MockError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        let entries = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<MockEntry>(l).map_err(|e| MockError::Parse {
                    line: i + 1,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_entries(entries)
    }

    /// Writes the fixture back out, sorted by key.
    pub fn dump(&self, path: &Path) -> Result<(), MockError> {
        let io = |source| MockError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut out = BufWriter::new(fs::File::create(path).map_err(io)?);
        for entry in self.entries.values() {
            let line = serde_json::to_string(entry).expect("mock entry serialises");
            writeln!(out, "{line}").map_err(io)?;
        }
        out.flush().map_err(io)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, PromptOrder)> {
        self.entries.keys().map(|(q, o)| (q.as_str(), *o))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of `complete` calls served so far, including failed lookups.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

impl Provider for MockProvider {
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (prompt.question_id.clone(), prompt.order);
        let entry = self.entries.get(&key).ok_or_else(|| {
            ProviderError::new(
                ProviderErrorKind::Malformed,
                format!("no scripted response for ({}, {})", key.0, key.1),
            )
        })?;
        Ok(ModelResponse {
            text: entry.text.clone(),
            finish_reason: entry.finish_reason,
            prompt_tokens: word_count(&prompt.text),
            completion_tokens: word_count(&entry.text),
            latency_ms: 0,
            from_cache: false,
            request_fingerprint: request_fingerprint(spec, prompt),
            attempts: 1,
        })
    }
}
