#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use orderbench::providers::request_fingerprint;
use orderbench::{
    DatasetDescriptor, FormatId, LoadedDataset, ModelResponse, ModelSpec, PromptOrder, Provider, ProviderError,
    ProviderErrorKind, Question, RenderedPrompt,
};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn mock20() -> LoadedDataset {
    let d = DatasetDescriptor::new("mock20", FormatId::CanonicalJsonl, fixture("mock20_questions.jsonl"), 0);
    orderbench::datasets::load_dataset(&d).unwrap()
}

pub fn mock_spec() -> ModelSpec {
    ModelSpec::new("mock", "mock-model")
}

/// Question indices whose scripted answer is wrong, per strategy. The mock20
/// fixtures were generated from exactly these sets.
pub fn mock20_wrong(order: PromptOrder) -> &'static [usize] {
    match order {
        PromptOrder::Raw => &[2, 5, 7, 11, 13, 17, 19],
        PromptOrder::AnswerFirst => &[3, 5, 11, 17, 19],
        PromptOrder::LogicFirst => &[5, 9, 11, 15, 17, 19],
        PromptOrder::Reflexive => &[5, 17],
    }
}

/// Questions where the answer-first and logic-first picks differ.
pub const MOCK20_DISAGREE: [usize; 3] = [3, 9, 15];

/// Deterministic stand-in provider: answers option `pick(question, order)`.
/// Counts calls, both in total and per request fingerprint.
pub struct ScriptedProvider<F> {
    pick: F,
    pub calls: AtomicUsize,
    pub by_fingerprint: Mutex<BTreeMap<String, usize>>,
    /// Return an authentication error once this many calls have succeeded.
    pub fail_after: Option<usize>,
}

impl<F> ScriptedProvider<F>
where
    F: Fn(&str, PromptOrder) -> String + Send + Sync,
{
    pub fn new(pick: F) -> Self {
        Self {
            pick,
            calls: AtomicUsize::new(0),
            by_fingerprint: Mutex::new(BTreeMap::new()),
            fail_after: None,
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn fingerprints(&self) -> BTreeMap<String, usize> {
        self.by_fingerprint.lock().unwrap().clone()
    }
}

impl<F> Provider for ScriptedProvider<F>
where
    F: Fn(&str, PromptOrder) -> String + Send + Sync,
{
    fn complete(&self, spec: &ModelSpec, prompt: &RenderedPrompt) -> Result<ModelResponse, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_after.is_some_and(|limit| n >= limit) {
            return Err(ProviderError::new(ProviderErrorKind::Auth, "key revoked"));
        }
        let fp = request_fingerprint(spec, prompt);
        *self.by_fingerprint.lock().unwrap().entry(fp.clone()).or_default() += 1;
        Ok(ModelResponse {
            text: (self.pick)(&prompt.question_id, prompt.order),
            finish_reason: orderbench::providers::FinishReason::Stop,
            prompt_tokens: 1,
            completion_tokens: 1,
            latency_ms: 0,
            from_cache: false,
            request_fingerprint: fp,
            attempts: 1,
        })
    }
}

pub fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Index of a question within mock20 (`mock20-000007` -> 7).
pub fn row_of(q: &Question) -> usize {
    q.id.rsplit('-').next().unwrap().parse().unwrap()
}

/// Scripted mock20 answers keyed by (question id, order), read straight from the fixture.
pub fn mock20_pick() -> impl Fn(&str, PromptOrder) -> String + Send + Sync + 'static {
    let mut map = BTreeMap::new();
    for line in read(&fixture("mock20_responses.jsonl")).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let order: PromptOrder = v["order"].as_str().unwrap().parse().unwrap();
        map.insert(
            (v["question_id"].as_str().unwrap().to_string(), order),
            v["text"].as_str().unwrap().to_string(),
        );
    }
    move |id, order| map[&(id.to_string(), order)].clone()
}

pub fn all_strategies() -> std::collections::BTreeSet<PromptOrder> {
    PromptOrder::ALL.into_iter().collect()
}

pub fn mock20_plan(run_id: &str, run_dir: &Path, parallelism: usize) -> orderbench::runner::RunPlan {
    orderbench::runner::RunPlan {
        run_id: run_id.to_string(),
        run_dir: run_dir.to_path_buf(),
        cache_dir: None,
        models: vec![mock_spec()],
        datasets: vec![mock20()],
        strategies: all_strategies(),
        parallelism,
        unparsed_policy: orderbench::UnparsedPolicy::Strict,
        templates: orderbench::TemplateSet::builtin(),
        markers: orderbench::MarkerList::builtin().clone(),
    }
}

/// Four models x three datasets x four strategies of reference figures.
#[derive(serde::Deserialize)]
pub struct ReferenceGrid {
    pub datasets: Vec<String>,
    pub strategies: Vec<PromptOrder>,
    pub accuracy: BTreeMap<String, BTreeMap<String, BTreeMap<PromptOrder, f64>>>,
    /// Strategies holding each (model, dataset) row maximum.
    pub bold: BTreeMap<String, BTreeMap<String, Vec<PromptOrder>>>,
    pub consistency: BTreeMap<String, BTreeMap<String, f64>>,
    pub correlation: BTreeMap<String, BTreeMap<PromptOrder, f64>>,
}

impl ReferenceGrid {
    pub fn load() -> Self {
        serde_json::from_str(&read(&fixture("reference_grid.json"))).unwrap()
    }

    pub fn models(&self) -> Vec<String> {
        self.accuracy.keys().cloned().collect()
    }

    /// One summary per (model, dataset), datasets in their listed order.
    /// `consistency_of` maps a model to the row whose consistency it takes.
    pub fn summaries(&self, consistency_of: impl Fn(&str) -> String) -> Vec<orderbench::RunSummary> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for m in self.models() {
                out.push(orderbench::RunSummary {
                    run_id: format!("run-{m}"),
                    model_name: m.clone(),
                    dataset_name: d.clone(),
                    accuracy_by_strategy: self.accuracy[&m][d].clone(),
                    consistency: Some(self.consistency[&consistency_of(&m)][d]),
                    counted: 1000,
                    excluded: 0,
                });
            }
        }
        out
    }
}
