//! Trial orchestration.
//!
//! A [`Runner`] binds one provider to a response cache and executes the
//! order benchmark (answer-first vs. logic-first consistency), the reflexive
//! two-step query, or a full strategy suite over a question list. Every
//! completion goes through the cache first, so an interrupted run can be
//! repeated without re-issuing finished requests.

mod cache;
mod execute;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::thread;

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::datasets::Question;
use crate::extract::{ExtractedAnswer, MarkerList};
use crate::prompts::{PromptOrder, RenderedPrompt, TemplateSet};
use crate::providers::{request_fingerprint, FinishReason, ModelResponse, ModelSpec, Provider, ProviderErrorKind};
use crate::stats::{self, RunSummary};

pub use cache::{CacheError, ResponseCache};
pub use execute::{
    execute_run, read_manifest, RunDirectory, RunManifest, RunOutcome, RunPlan, RunStatus, Totals, MANIFEST_FILE,
    PAIRS_FILE, RECORDS_FILE, TIMINGS_FILE,
};

/// How unparseable responses count towards consistency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparsedPolicy {
    /// Any unparsed response makes its pair inconsistent.
    #[default]
    Strict,
    /// Two unparsed responses agree with each other.
    Lenient,
}

impl UnparsedPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            UnparsedPolicy::Strict => "strict",
            UnparsedPolicy::Lenient => "lenient",
        }
    }

    pub fn agree(self, a: &ExtractedAnswer, b: &ExtractedAnswer) -> bool {
        match (a.is_parsed(), b.is_parsed()) {
            (true, true) => a.label == b.label,
            (false, false) => self == UnparsedPolicy::Lenient,
            _ => false,
        }
    }
}

impl fmt::Display for UnparsedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UnparsedPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(UnparsedPolicy::Strict),
            "lenient" => Ok(UnparsedPolicy::Lenient),
            other => Err(format!("unknown unparsed policy `{other}` (expected strict or lenient)")),
        }
    }
}

/// The outcome of one (question, model, order) query.
///
/// Wall-clock timings live in [`TrialTiming`] so that record files are
/// reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub question_id: String,
    pub dataset_name: String,
    pub model_name: String,
    pub order: PromptOrder,
    pub prompt_fingerprint: String,
    pub template_version: String,
    pub response_text: String,
    pub finish_reason: FinishReason,
    pub extracted: ExtractedAnswer,
    pub gold_label: String,
    pub correct: bool,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub question_id: String,
    pub dataset_name: String,
    pub model_name: String,
    pub order: PromptOrder,
    pub started_at: String,
    pub finished_at: String,
    pub latency_ms: u64,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyPair {
    pub question_id: String,
    pub record_answer_first: TrialRecord,
    pub record_logic_first: TrialRecord,
    pub consistent: bool,
}

/// A question dropped from a run because one of its queries failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionFailure {
    pub model_name: String,
    pub dataset_name: String,
    pub question_id: String,
    pub order: PromptOrder,
    pub kind: String,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid strategy set: {0}")]
    InvalidStrategySet(String),
    #[error("no questions to run")]
    EmptyDataset,
    #[error("run aborted after {completed} completed questions: {detail}")]
    AbortedRun { detail: String, completed: usize },
    #[error("every question failed; nothing to aggregate")]
    NoCompletedQuestions,
    #[error("run directory I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot set up provider for {model}: {detail}")]
    ProviderSetup { model: String, detail: String },
}

/// Validates a strategy set: nonempty, and reflexive needs both variants.
pub fn check_strategies(strategies: &BTreeSet<PromptOrder>) -> Result<(), RunError> {
    if strategies.is_empty() {
        return Err(RunError::InvalidStrategySet("no strategies requested".into()));
    }
    if strategies.contains(&PromptOrder::Reflexive)
        && !(strategies.contains(&PromptOrder::AnswerFirst) && strategies.contains(&PromptOrder::LogicFirst))
    {
        return Err(RunError::InvalidStrategySet(
            "reflexive requires both answer_first and logic_first".into(),
        ));
    }
    Ok(())
}

/// Everything a suite run produced for one (model, dataset).
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub summary: RunSummary,
    /// Sorted by (question_id, order).
    pub records: Vec<TrialRecord>,
    pub pairs: Vec<ConsistencyPair>,
    pub timings: Vec<TrialTiming>,
    pub failures: Vec<QuestionFailure>,
}

#[derive(Debug, Default)]
struct Counters {
    queries: AtomicU64,
    cache_hits: AtomicU64,
    errors: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerTotals {
    pub queries_issued: u64,
    pub cache_hits: u64,
    pub errors: u64,
}

struct QuestionOutcome {
    records: Vec<TrialRecord>,
    timings: Vec<TrialTiming>,
    pair: Option<ConsistencyPair>,
}

struct Failure {
    order: PromptOrder,
    kind: String,
    detail: String,
    fatal: bool,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct Runner<P> {
    provider: P,
    cache: ResponseCache,
    templates: TemplateSet,
    markers: MarkerList,
    parallelism: usize,
    policy: UnparsedPolicy,
    run_id: String,
    counters: Counters,
}

impl<P: Provider> Runner<P> {
    pub fn new(provider: P, cache: ResponseCache) -> Self {
        Self {
            provider,
            cache,
            templates: TemplateSet::builtin(),
            markers: MarkerList::builtin().clone(),
            parallelism: 4,
            policy: UnparsedPolicy::Strict,
            run_id: String::new(),
            counters: Counters::default(),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_markers(mut self, markers: MarkerList) -> Self {
        self.markers = markers;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn with_unparsed_policy(mut self, policy: UnparsedPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn totals(&self) -> RunnerTotals {
        RunnerTotals {
            queries_issued: self.counters.queries.load(Ordering::SeqCst),
            cache_hits: self.counters.cache_hits.load(Ordering::SeqCst),
            errors: self.counters.errors.load(Ordering::SeqCst),
        }
    }

    /// Answer-first vs. logic-first consistency over `questions`.
    ///
    /// Returns the fraction of agreeing pairs among the questions whose two
    /// queries both succeeded, and those pairs in question order.
    pub fn run_order_benchmark(
        &self,
        spec: &ModelSpec,
        questions: &[Question],
    ) -> Result<(f64, Vec<ConsistencyPair>), RunError> {
        let strategies = BTreeSet::from([PromptOrder::AnswerFirst, PromptOrder::LogicFirst]);
        let result = self.run_suite(spec, questions, &strategies)?;
        let c = result.summary.consistency.ok_or(RunError::NoCompletedQuestions)?;
        Ok((c, result.pairs))
    }

    /// The reflexive two-step query for a single question. Returns the final
    /// reflexive record and the (answer-first, logic-first) intermediates.
    pub fn run_reflexive(
        &self,
        spec: &ModelSpec,
        question: &Question,
    ) -> Result<(TrialRecord, (TrialRecord, TrialRecord)), RunError> {
        let strategies = BTreeSet::from([PromptOrder::AnswerFirst, PromptOrder::LogicFirst, PromptOrder::Reflexive]);
        let mut outcome = match self.run_question(spec, question, &strategies) {
            Ok(o) => o,
            Err(f) => {
                return Err(RunError::AbortedRun {
                    detail: format!("{} query for {} failed: {}: {}", f.order, question.id, f.kind, f.detail),
                    completed: 0,
                })
            }
        };
        let take = |records: &mut Vec<TrialRecord>, order| {
            let i = records.iter().position(|r| r.order == order).expect("record present");
            records.remove(i)
        };
        let final_record = take(&mut outcome.records, PromptOrder::Reflexive);
        let af = take(&mut outcome.records, PromptOrder::AnswerFirst);
        let lf = take(&mut outcome.records, PromptOrder::LogicFirst);
        Ok((final_record, (af, lf)))
    }

    /// Runs every requested strategy on every question.
    ///
    /// Questions are processed by up to `parallelism` workers, but results are
    /// reassembled in dataset order. A question with any failed query is
    /// excluded from all aggregates and reported in `failures`. An
    /// authentication failure stops the run with [`RunError::AbortedRun`];
    /// completed responses stay in the cache.
    pub fn run_suite(
        &self,
        spec: &ModelSpec,
        questions: &[Question],
        strategies: &BTreeSet<PromptOrder>,
    ) -> Result<SuiteResult, RunError> {
        check_strategies(strategies)?;
        if questions.is_empty() {
            return Err(RunError::EmptyDataset);
        }
        let dataset_name = questions[0].dataset_name.clone();
        let outcomes = self.map_questions(questions, |q| self.run_question(spec, q, strategies))?;

        let mut records = Vec::new();
        let mut pairs = Vec::new();
        let mut timings = Vec::new();
        let mut failures = Vec::new();
        for (q, outcome) in questions.iter().zip(outcomes) {
            match outcome {
                Ok(o) => {
                    records.extend(o.records);
                    timings.extend(o.timings);
                    pairs.extend(o.pair);
                }
                Err(f) => failures.push(QuestionFailure {
                    model_name: spec.model_name.clone(),
                    dataset_name: q.dataset_name.clone(),
                    question_id: q.id.clone(),
                    order: f.order,
                    kind: f.kind,
                    detail: f.detail,
                }),
            }
        }

        let mut accuracy_by_strategy = std::collections::BTreeMap::new();
        for &order in strategies {
            let group: Vec<TrialRecord> = records.iter().filter(|r| r.order == order).cloned().collect();
            if let Ok(acc) = stats::accuracy(&group) {
                accuracy_by_strategy.insert(order, acc);
            }
        }
        let consistency = stats::consistency(&pairs).ok();
        let summary = RunSummary {
            run_id: self.run_id.clone(),
            model_name: spec.model_name.clone(),
            dataset_name,
            accuracy_by_strategy,
            consistency,
            counted: questions.len() - failures.len(),
            excluded: failures.len(),
        };
        records.sort_by(|a, b| (&a.question_id, a.order).cmp(&(&b.question_id, b.order)));
        timings.sort_by(|a, b| (&a.question_id, a.order).cmp(&(&b.question_id, b.order)));
        Ok(SuiteResult {
            summary,
            records,
            pairs,
            timings,
            failures,
        })
    }

    /// Runs `work` over the questions on a bounded worker pool and returns the
    /// results in input order. Stops handing out work after a fatal failure.
    fn map_questions<T: Send>(
        &self,
        questions: &[Question],
        work: impl Fn(&Question) -> Result<T, Failure> + Sync,
    ) -> Result<Vec<Result<T, Failure>>, RunError> {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let (tx, rx) = mpsc::channel();
        let workers = self.parallelism.min(questions.len()).max(1);
        thread::scope(|s| {
            for _ in 0..workers {
                let tx = tx.clone();
                let (next, abort, work) = (&next, &abort, &work);
                s.spawn(move || loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(q) = questions.get(i) else { break };
                    let result = work(q);
                    if matches!(&result, Err(f) if f.fatal) {
                        abort.store(true, Ordering::SeqCst);
                    }
                    if tx.send((i, result)).is_err() {
                        break;
                    }
                });
            }
        });
        drop(tx);

        let mut slots: Vec<Option<Result<T, Failure>>> = (0..questions.len()).map(|_| None).collect();
        for (i, result) in rx {
            slots[i] = Some(result);
        }
        let completed = slots.iter().filter(|s| matches!(s, Some(Ok(_)))).count();
        if let Some(f) = slots.iter().flatten().find_map(|r| r.as_ref().err().filter(|f| f.fatal)) {
            return Err(RunError::AbortedRun {
                detail: format!("{}: {}", f.kind, f.detail),
                completed,
            });
        }
        Ok(slots
            .into_iter()
            .map(|s| s.expect("every question processed when not aborted"))
            .collect())
    }

    fn run_question(
        &self,
        spec: &ModelSpec,
        q: &Question,
        strategies: &BTreeSet<PromptOrder>,
    ) -> Result<QuestionOutcome, Failure> {
        let mut records: Vec<TrialRecord> = Vec::new();
        let mut timings = Vec::new();
        for &order in strategies {
            let prompt = (if order == PromptOrder::Reflexive {
                let text_of = |o| {
                    records
                        .iter()
                        .find(|r| r.order == o)
                        .map(|r| r.response_text.as_str())
                        .unwrap_or_default()
                };
                self.templates
                    .render_reflexive(q, text_of(PromptOrder::AnswerFirst), text_of(PromptOrder::LogicFirst))
            } else {
                self.templates.render_variant(q, order)
            })
            .map_err(|e| Failure {
                order,
                kind: "prompt".into(),
                detail: e.to_string(),
                fatal: false,
            })?;
            let (record, timing) = self.trial(spec, q, &prompt)?;
            records.push(record);
            timings.push(timing);
        }

        let find = |o| records.iter().find(|r| r.order == o);
        let pair = match (find(PromptOrder::AnswerFirst), find(PromptOrder::LogicFirst)) {
            (Some(af), Some(lf)) => Some(ConsistencyPair {
                question_id: q.id.clone(),
                consistent: self.policy.agree(&af.extracted, &lf.extracted),
                record_answer_first: af.clone(),
                record_logic_first: lf.clone(),
            }),
            _ => None,
        };
        Ok(QuestionOutcome { records, timings, pair })
    }

    /// One cache-first completion plus extraction.
    fn trial(
        &self,
        spec: &ModelSpec,
        q: &Question,
        prompt: &RenderedPrompt,
    ) -> Result<(TrialRecord, TrialTiming), Failure> {
        let started_at = now();
        let response = self.obtain(spec, prompt).map_err(|e| Failure {
            order: prompt.order,
            kind: e.kind.to_string(),
            fatal: e.kind == ProviderErrorKind::Auth,
            detail: e.detail,
        })?;
        let extracted = self
            .markers
            .extract(&response.text, &q.option_labels(), &q.option_texts(), prompt.order);
        let correct = extracted.is_parsed() && extracted.label.as_deref() == Some(q.gold_label.as_str());
        let record = TrialRecord {
            question_id: q.id.clone(),
            dataset_name: q.dataset_name.clone(),
            model_name: spec.model_name.clone(),
            order: prompt.order,
            prompt_fingerprint: response.request_fingerprint.clone(),
            template_version: prompt.template_version.clone(),
            response_text: response.text,
            finish_reason: response.finish_reason,
            extracted,
            gold_label: q.gold_label.clone(),
            correct,
            attempt_count: response.attempts,
        };
        let timing = TrialTiming {
            question_id: q.id.clone(),
            dataset_name: q.dataset_name.clone(),
            model_name: spec.model_name.clone(),
            order: prompt.order,
            started_at,
            finished_at: now(),
            latency_ms: response.latency_ms,
            from_cache: response.from_cache,
        };
        Ok((record, timing))
    }

    fn obtain(
        &self,
        spec: &ModelSpec,
        prompt: &RenderedPrompt,
    ) -> Result<ModelResponse, crate::providers::ProviderError> {
        let fingerprint = request_fingerprint(spec, prompt);
        if let Some(hit) = self.cache.get(&fingerprint) {
            self.counters.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        self.counters.queries.fetch_add(1, Ordering::SeqCst);
        match self.provider.complete(spec, prompt) {
            Ok(mut response) => {
                response.request_fingerprint = fingerprint.clone();
                if let Err(e) = self.cache.put(&fingerprint, &response) {
                    tracing::warn!(error = %e, "failed to cache response");
                }
                debug!(question = %prompt.question_id, order = %prompt.order, "completed");
                Ok(response)
            }
            Err(e) => {
                self.counters.errors.fetch_add(1, Ordering::SeqCst);
                Err(e)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{canonical_label, OptionItem};
    use crate::providers::{MockEntry, MockProvider};
    use std::collections::BTreeMap;

    fn questions(n: usize) -> Vec<Question> {
        (0..n)
            .map(|i| Question {
                id: format!("t-{i:06}"),
                dataset_name: "t".into(),
                stem: format!("Question {i}?"),
                options: (0..4)
                    .map(|j| OptionItem {
                        label: canonical_label(j),
                        text: format!("option {i}-{j}"),
                    })
                    .collect(),
                gold_label: "B".into(),
                metadata: BTreeMap::new(),
            })
            .collect()
    }

    #[test]
    fn strategy_set_rules() {
        assert!(check_strategies(&BTreeSet::new()).is_err());
        assert!(check_strategies(&BTreeSet::from([PromptOrder::Reflexive, PromptOrder::AnswerFirst])).is_err());
        assert!(check_strategies(&BTreeSet::from([PromptOrder::Raw])).is_ok());
    }

    #[test]
    fn unparsed_policy_semantics() {
        let u = ExtractedAnswer::unparsed();
        assert!(!UnparsedPolicy::Strict.agree(&u, &u));
        assert!(UnparsedPolicy::Lenient.agree(&u, &u));
    }

    #[test]
    fn raw_only_accuracy() {
        let qs = questions(10);
        let mock = MockProvider::from_entries(qs.iter().enumerate().map(|(i, q)| {
            MockEntry::new(&q.id, PromptOrder::Raw, if i < 7 { "The answer is B." } else { "The answer is A." })
        }))
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let runner = Runner::new(&mock, ResponseCache::open(dir.path()).unwrap());
        let spec = ModelSpec::new("mock", "m");
        let res = runner.run_suite(&spec, &qs, &BTreeSet::from([PromptOrder::Raw])).unwrap();
        assert_eq!(res.records.len(), 10);
        assert_eq!(res.summary.accuracy_by_strategy[&PromptOrder::Raw], 0.7);
        assert_eq!(res.summary.consistency, None);
        assert_eq!(mock.call_count(), 10);
    }

    #[test]
    fn failed_question_is_excluded() {
        let qs = questions(3);
        // No logic-first script for the last question.
        let entries = qs.iter().flat_map(|q| {
            let mut v = vec![MockEntry::new(&q.id, PromptOrder::AnswerFirst, "B. yes")];
            if q.id != "t-000002" {
                v.push(MockEntry::new(&q.id, PromptOrder::LogicFirst, "so the answer is B"));
            }
            v
        });
        let mock = MockProvider::from_entries(entries).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let runner = Runner::new(&mock, ResponseCache::open(dir.path()).unwrap());
        let spec = ModelSpec::new("mock", "m");
        let set = BTreeSet::from([PromptOrder::AnswerFirst, PromptOrder::LogicFirst]);
        let res = runner.run_suite(&spec, &qs, &set).unwrap();
        assert_eq!((res.summary.counted, res.summary.excluded), (2, 1));
        assert_eq!(res.failures[0].question_id, "t-000002");
        assert_eq!(res.failures[0].kind, "malformed");
        assert_eq!(res.summary.consistency, Some(1.0));
        assert_eq!(res.records.len(), 4);
    }
}
