//! Run directories: manifest, record files and the (model x dataset) grid.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tracing::info;

use super::{now, QuestionFailure, ResponseCache, RunError, Runner, SuiteResult, UnparsedPolicy};
use crate::datasets::{DatasetDescriptor, FormatId, LoadedDataset};
use crate::extract::MarkerList;
use crate::prompts::{PromptOrder, TemplateSet};
use crate::providers::{ModelSpec, Provider};
use crate::stats::RunSummary;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const TIMINGS_FILE: &str = "timings.jsonl";
pub const CACHE_DIR: &str = "cache";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Finished,
    Aborted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub queries_issued: u64,
    pub cache_hits: u64,
    pub errors: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub status: RunStatus,
    pub template_version: String,
    pub unparsed_policy: UnparsedPolicy,
    pub strategies: Vec<PromptOrder>,
    pub parallelism: usize,
    pub models: Vec<ModelSpec>,
    pub datasets: Vec<DatasetDescriptor>,
    /// Task framing per dataset, e.g. `zero-shot mc1` for TruthfulQA.
    pub task_variants: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub totals: Totals,
    pub errors: Vec<QuestionFailure>,
    pub aborted_reason: Option<String>,
    pub summaries: Vec<RunSummary>,
}

pub fn read_manifest(run_dir: &Path) -> io::Result<RunManifest> {
    let text = fs::read_to_string(run_dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// Owns the files of one run directory.
#[derive(Debug, Clone)]
pub struct RunDirectory {
    root: PathBuf,
}

impl RunDirectory {
    pub fn create(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.root.join(file)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> io::Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        serde_json::to_writer_pretty(&mut tmp, manifest).map_err(io::Error::from)?;
        tmp.write_all(b"\n")?;
        tmp.persist(self.path(MANIFEST_FILE)).map_err(|e| e.error)?;
        Ok(())
    }

    /// Truncates the record files so a (re)started run writes them afresh.
    pub fn reset_outputs(&self) -> io::Result<()> {
        for f in [RECORDS_FILE, PAIRS_FILE, TIMINGS_FILE] {
            fs::File::create(self.path(f))?;
        }
        Ok(())
    }

    pub fn append_jsonl<T: Serialize>(&self, file: &str, items: &[T]) -> io::Result<()> {
        let f = OpenOptions::new().create(true).append(true).open(self.path(file))?;
        let mut out = BufWriter::new(f);
        for item in items {
            serde_json::to_writer(&mut out, item).map_err(io::Error::from)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn append_suite(&self, suite: &SuiteResult) -> io::Result<()> {
        self.append_jsonl(RECORDS_FILE, &suite.records)?;
        self.append_jsonl(PAIRS_FILE, &suite.pairs)?;
        self.append_jsonl(TIMINGS_FILE, &suite.timings)
    }
}

/// Everything needed to execute one run.
pub struct RunPlan {
    pub run_id: String,
    pub run_dir: PathBuf,
    /// Defaults to `<run_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    pub models: Vec<ModelSpec>,
    pub datasets: Vec<LoadedDataset>,
    pub strategies: BTreeSet<PromptOrder>,
    pub parallelism: usize,
    pub unparsed_policy: UnparsedPolicy,
    pub templates: TemplateSet,
    pub markers: MarkerList,
}

/// Builds the provider for one model; errors are reported per model.
pub type ProviderFactory<'a> = dyn Fn(&ModelSpec) -> Result<Box<dyn Provider>, String> + 'a;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
}

fn task_variant(format: FormatId) -> &'static str {
    match format {
        FormatId::TruthfulqaMc => "zero-shot mc1",
        _ => "zero-shot",
    }
}

/// Runs every (model, dataset) suite of `plan`, persisting as it goes.
///
/// The manifest is written before the first query and rewritten after every
/// suite. On abort it is left with status `aborted`; the cache keeps every
/// completed response so the same plan can be re-executed to resume.
pub fn execute_run(
    plan: &RunPlan,
    make_provider: &ProviderFactory<'_>,
) -> Result<RunOutcome, RunError> {
    super::check_strategies(&plan.strategies)?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| RunError::Io { path, source }
    };

    let providers = plan
        .models
        .iter()
        .map(|m| {
            make_provider(m).map_err(|detail| RunError::ProviderSetup {
                model: m.model_name.clone(),
                detail,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let dir = RunDirectory::create(&plan.run_dir).map_err(io_err(&plan.run_dir))?;
    let cache_dir = plan.cache_dir.clone().unwrap_or_else(|| plan.run_dir.join(CACHE_DIR));
    let cache = ResponseCache::open(&cache_dir).map_err(io_err(&cache_dir))?;

    let started_at = read_manifest(&plan.run_dir)
        .map(|m| m.started_at)
        .unwrap_or_else(|_| now());
    let mut manifest = RunManifest {
        run_id: plan.run_id.clone(),
        status: RunStatus::Running,
        template_version: plan.templates.version().to_string(),
        unparsed_policy: plan.unparsed_policy,
        strategies: plan.strategies.iter().copied().collect(),
        parallelism: plan.parallelism,
        models: plan.models.clone(),
        datasets: plan.datasets.iter().map(|d| d.descriptor.clone()).collect(),
        task_variants: plan
            .datasets
            .iter()
            .map(|d| (d.descriptor.name.clone(), task_variant(d.descriptor.format).to_string()))
            .collect(),
        started_at,
        finished_at: None,
        totals: Totals::default(),
        errors: Vec::new(),
        aborted_reason: None,
        summaries: Vec::new(),
    };
    let manifest_path = dir.path(MANIFEST_FILE);
    dir.write_manifest(&manifest).map_err(io_err(&manifest_path))?;
    dir.reset_outputs().map_err(io_err(dir.root()))?;

    for (spec, provider) in plan.models.iter().zip(&providers) {
        let runner = Runner::new(provider.as_ref(), cache.clone())
            .with_templates(plan.templates.clone())
            .with_markers(plan.markers.clone())
            .with_parallelism(plan.parallelism)
            .with_unparsed_policy(plan.unparsed_policy)
            .with_run_id(plan.run_id.clone());
        for dataset in &plan.datasets {
            info!(model = %spec.model_name, dataset = %dataset.descriptor.name, "running suite");
            let result = runner.run_suite(spec, &dataset.questions, &plan.strategies);
            let totals = runner.totals();
            let suite = match result {
                Ok(s) => s,
                Err(e) => {
                    add_totals(&mut manifest.totals, totals);
                    manifest.status = RunStatus::Aborted;
                    manifest.aborted_reason = Some(e.to_string());
                    manifest.finished_at = Some(now());
                    dir.write_manifest(&manifest).map_err(io_err(&manifest_path))?;
                    return Err(e);
                }
            };
            dir.append_suite(&suite).map_err(io_err(dir.root()))?;
            manifest.errors.extend(suite.failures.iter().cloned());
            manifest.summaries.push(suite.summary.clone());
            dir.write_manifest(&manifest).map_err(io_err(&manifest_path))?;
        }
        add_totals(&mut manifest.totals, runner.totals());
    }

    manifest.status = RunStatus::Finished;
    manifest.finished_at = Some(now());
    dir.write_manifest(&manifest).map_err(io_err(&manifest_path))?;
    Ok(RunOutcome {
        manifest,
        run_dir: plan.run_dir.clone(),
    })
}

fn add_totals(t: &mut Totals, r: super::RunnerTotals) {
    t.queries_issued += r.queries_issued;
    t.cache_hits += r.cache_hits;
    t.errors += r.errors;
}
