//! Reasoning-order consistency benchmarking for LLMs on multiple-choice data.
//!
//! Each question is asked twice, once with an instruction to answer before
//! reasoning and once with an instruction to reason before answering. The
//! fraction of questions where both responses select the same option is the
//! model's *consistency*. A third, reflexive query hands both responses back
//! to the model and asks it to adjudicate a final answer.
//!
//! The crate is organised bottom-up:
//!
//! * [`datasets`] loads MMLU / TruthfulQA / LogiQA / canonical files into [`Question`]s.
//! * [`prompts`] renders the raw, answer-first, logic-first and reflexive prompts.
//! * [`providers`] talks to chat-completions endpoints (or a scripted mock).
//! * [`extract`] pulls an option label out of free-form model text.
//! * [`runner`] orchestrates the trials with a content-addressed response cache.
//! * [`stats`] computes accuracy, consistency and Pearson correlation.
//! * [`report`] renders the accuracy / consistency / correlation tables.
//! * [`config`] and [`cli`] wire everything to the `orderbench` binary.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod extract;
pub mod prompts;
pub mod providers;
pub mod report;
pub mod runner;
pub mod stats;

mod digest;

pub use datasets::{DatasetDescriptor, DatasetError, FormatId, LoadedDataset, Question};
pub use extract::{extract_answer, ExtractStatus, ExtractedAnswer, MarkerList};
pub use prompts::{PromptOrder, RenderedPrompt, TemplateSet};
pub use providers::{ModelResponse, ModelSpec, Provider, ProviderError, ProviderErrorKind};
pub use runner::{ConsistencyPair, RunError, Runner, TrialRecord, UnparsedPolicy};
pub use stats::{CorrelationCell, RunSummary, StatsError};
