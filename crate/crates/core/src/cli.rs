//! Command-line front end. [`run_cli`] returns the process exit code.
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | unexpected failure (I/O, report merge) |
//! | 2 | usage, config or template error |
//! | 3 | dataset error |
//! | 4 | provider error |
//! | 5 | run aborted |
//! | 6 | runs built with different template versions |
//! | 7 | run manifest missing or unfinished |

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;

use crate::config::{ConfigError, Overrides, RunConfig};
use crate::datasets::{export_canonical, load_dataset, DatasetDescriptor, FormatId, LoadedDataset};
use crate::extract::MarkerList;
use crate::prompts::{PromptOrder, RenderedPrompt, TemplateSet};
use crate::providers::{HttpProvider, MockProvider, ModelSpec, Provider};
use crate::report::{build_report_from_summaries, REPORT_DIR};
use crate::runner::{execute_run, read_manifest, RunError, RunPlan, RunStatus, UnparsedPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATASET: i32 = 3;
pub const EXIT_PROVIDER: i32 = 4;
pub const EXIT_ABORTED: i32 = 5;
pub const EXIT_TEMPLATE_MISMATCH: i32 = 6;
pub const EXIT_MANIFEST_MISSING: i32 = 7;

#[derive(Debug, Parser)]
#[command(name = "orderbench", version, about = "Reasoning-order consistency benchmark")]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true, default_value = "orderbench.toml")]
    pub config: PathBuf,
    /// Never touch the network; non-mock models are only checked statically.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Cap every dataset at N questions.
    #[arg(long, global = true, value_name = "N")]
    pub limit: Option<usize>,
    /// Continue the run with this id instead of starting a new one.
    #[arg(long, global = true, value_name = "RUN_ID")]
    pub resume: Option<String>,
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    #[arg(long, global = true, value_name = "POLICY")]
    pub unparsed_policy: Option<UnparsedPolicy>,
    #[arg(long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check config, templates, datasets and providers without running.
    Validate,
    /// Execute the configured run and write its report.
    Run,
    /// Merge finished runs into one report.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
    /// Write a dataset in the canonical JSONL format.
    ExportDataset {
        /// Dataset name from the config.
        #[arg(long, conflicts_with_all = ["input", "format"])]
        dataset: Option<String>,
        #[arg(long, requires = "format")]
        input: Option<PathBuf>,
        #[arg(long, requires = "input")]
        format: Option<FormatId>,
        /// Dataset name used for question ids when reading `--input`.
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<(), Failure>;

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_CONFIG;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    let result = match &cli.command {
        Command::Validate => validate(&cli, out),
        Command::Run => run(&cli, out),
        Command::Report { run_dirs } => report(&cli, run_dirs, out),
        Command::ExportDataset {
            dataset,
            input,
            format,
            name,
            out: dest,
        } => export(&cli, dataset.as_deref(), input.as_deref(), *format, name, dest, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn overrides(cli: &Cli) -> Overrides {
    Overrides {
        limit: cli.limit,
        parallelism: cli.parallelism,
        unparsed_policy: cli.unparsed_policy,
        output_dir: cli.output_dir.clone(),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.apply(&overrides(cli));
    cfg.validate()?;
    Ok(cfg)
}

fn load_templates(cfg: &RunConfig) -> Result<TemplateSet, Failure> {
    let Some(dir) = &cfg.template_dir else {
        return Ok(TemplateSet::builtin());
    };
    let set = TemplateSet::from_dir(dir).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))?;
    let changed = set.diff_against_builtin();
    if !changed.is_empty() {
        return Err(Failure::new(
            EXIT_CONFIG,
            format!(
                "template mismatch: {} in {} differ from the checked-in templates",
                changed.join(", "),
                dir.display()
            ),
        ));
    }
    Ok(set)
}

fn load_markers(cfg: &RunConfig) -> Result<MarkerList, Failure> {
    match &cfg.markers_file {
        None => Ok(MarkerList::builtin().clone()),
        Some(p) => MarkerList::from_file(p)
            .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read markers {}: {e}", p.display()))),
    }
}

fn load_datasets(descriptors: &[DatasetDescriptor]) -> Result<Vec<LoadedDataset>, Failure> {
    descriptors
        .iter()
        .map(|d| load_dataset(d).map_err(|e| Failure::new(EXIT_DATASET, format!("dataset {}: {e}", d.name))))
        .collect()
}

fn make_provider(cfg: &RunConfig, spec: &ModelSpec) -> Result<Box<dyn Provider>, String> {
    if spec.is_mock() {
        let model = cfg
            .models
            .iter()
            .find(|m| m.spec.model_name == spec.model_name)
            .ok_or_else(|| format!("unknown model {}", spec.model_name))?;
        let path = model.fixture.as_ref().ok_or("mock model without fixture")?;
        let mock = MockProvider::from_fixture(path).map_err(|e| e.to_string())?;
        return Ok(Box::new(mock));
    }
    let http = HttpProvider::from_env(spec).map_err(|e| e.to_string())?;
    Ok(Box::new(http))
}

fn validate(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let cfg = load_config(cli)?;
    let _ = writeln!(out, "ok: config {}", cli.config.display());
    let templates = load_templates(&cfg)?;
    let _ = writeln!(out, "ok: templates {}", templates.version());
    load_markers(&cfg)?;

    let mut first: Option<Failure> = None;
    for d in &cfg.datasets {
        match load_dataset(d) {
            Ok(l) => {
                let _ = writeln!(out, "ok: dataset {} ({} questions)", d.name, l.questions.len());
            }
            Err(e) => {
                let f = Failure::new(EXIT_DATASET, format!("dataset {}: {e}", d.name));
                let _ = writeln!(out, "fail: {}", f.message);
                first.get_or_insert(f);
            }
        }
    }
    for m in &cfg.models {
        let checked = make_provider(&cfg, &m.spec).and_then(|p| {
            if m.spec.is_mock() || cli.offline {
                return Ok(());
            }
            let probe = RenderedPrompt {
                question_id: "validate-probe".into(),
                order: PromptOrder::Raw,
                text: "Reply with OK.".into(),
                template_version: templates.version().to_string(),
            };
            p.complete(&m.spec, &probe).map(|_| ()).map_err(|e| e.to_string())
        });
        match checked {
            Ok(()) => {
                let _ = writeln!(out, "ok: model {} ({})", m.spec.model_name, m.spec.provider_id);
            }
            Err(e) => {
                let f = Failure::new(EXIT_PROVIDER, format!("model {}: {e}", m.spec.model_name));
                let _ = writeln!(out, "fail: {}", f.message);
                first.get_or_insert(f);
            }
        }
    }
    match first {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

/// `run-<UTC timestamp>-<6 hex>`; sorts chronologically.
pub fn new_run_id() -> String {
    let suffix: u32 = rand::thread_rng().gen_range(0..0x100_0000);
    format!("run-{}-{suffix:06x}", chrono::Utc::now().format("%Y%m%dT%H%M%SZ"))
}

fn run(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let cfg = load_config(cli)?;
    let templates = load_templates(&cfg)?;
    let markers = load_markers(&cfg)?;
    if cli.offline {
        if let Some(m) = cfg.models.iter().find(|m| !m.spec.is_mock()) {
            return Err(Failure::new(
                EXIT_PROVIDER,
                format!("model {} needs the network but --offline was given", m.spec.model_name),
            ));
        }
    }
    let datasets = load_datasets(&cfg.datasets)?;

    let run_id = match &cli.resume {
        Some(id) => {
            let dir = cfg.output_dir.join(id);
            if read_manifest(&dir).is_err() {
                return Err(Failure::new(
                    EXIT_MANIFEST_MISSING,
                    format!("cannot resume: no manifest in {}", dir.display()),
                ));
            }
            id.clone()
        }
        None => new_run_id(),
    };
    let run_dir = cfg.output_dir.join(&run_id);
    let plan = RunPlan {
        run_id,
        run_dir: run_dir.clone(),
        cache_dir: cfg.cache_dir.clone(),
        models: cfg.models.iter().map(|m| m.spec.clone()).collect(),
        datasets,
        strategies: cfg.strategies.iter().copied().collect::<BTreeSet<_>>(),
        parallelism: cfg.parallelism,
        unparsed_policy: cfg.unparsed_policy,
        templates,
        markers,
    };
    let outcome = execute_run(&plan, &|spec| make_provider(&cfg, spec)).map_err(|e| {
        let code = match e {
            RunError::AbortedRun { .. } => EXIT_ABORTED,
            RunError::InvalidStrategySet(_) => EXIT_CONFIG,
            RunError::EmptyDataset => EXIT_DATASET,
            RunError::ProviderSetup { .. } | RunError::NoCompletedQuestions => EXIT_PROVIDER,
            RunError::Io { .. } => EXIT_FAILURE,
        };
        Failure::new(code, format!("{e} (run directory {})", run_dir.display()))
    })?;

    let bundle = build_report_from_summaries(&outcome.manifest.summaries)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    bundle
        .emit_all(&run_dir.join(REPORT_DIR))
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let t = outcome.manifest.totals;
    let _ = writeln!(
        out,
        "{}\nqueries={} cache_hits={} errors={}",
        run_dir.display(),
        t.queries_issued,
        t.cache_hits,
        t.errors
    );
    Ok(())
}

fn report(cli: &Cli, run_dirs: &[PathBuf], out: &mut dyn Write) -> CmdResult {
    let mut summaries = Vec::new();
    let mut version: Option<(String, &Path)> = None;
    for dir in run_dirs {
        let manifest = read_manifest(dir)
            .map_err(|e| Failure::new(EXIT_MANIFEST_MISSING, format!("{}: manifest unreadable: {e}", dir.display())))?;
        if manifest.status != RunStatus::Finished {
            return Err(Failure::new(
                EXIT_MANIFEST_MISSING,
                format!("{}: run is not finished", dir.display()),
            ));
        }
        match &version {
            Some((v, first)) if *v != manifest.template_version => {
                return Err(Failure::new(
                    EXIT_TEMPLATE_MISMATCH,
                    format!(
                        "template version {} in {} differs from {} in {}",
                        manifest.template_version,
                        dir.display(),
                        v,
                        first.display()
                    ),
                ));
            }
            Some(_) => {}
            None => version = Some((manifest.template_version.clone(), dir)),
        }
        summaries.extend(manifest.summaries);
    }
    let bundle = build_report_from_summaries(&summaries).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let dest = cli.output_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(REPORT_DIR);
    bundle
        .emit_all(&dest)
        .map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let _ = writeln!(out, "{}", dest.display());
    Ok(())
}

fn export(
    cli: &Cli,
    dataset: Option<&str>,
    input: Option<&Path>,
    format: Option<FormatId>,
    name: &str,
    dest: &Path,
    out: &mut dyn Write,
) -> CmdResult {
    let descriptor = match (dataset, input, format) {
        (Some(n), _, _) => {
            let cfg = load_config(cli)?;
            cfg.datasets
                .iter()
                .find(|d| d.name == n)
                .cloned()
                .ok_or_else(|| Failure::new(EXIT_CONFIG, format!("no dataset named {n} in config")))?
        }
        (None, Some(p), Some(f)) => DatasetDescriptor::new(name, f, p, cli.limit.unwrap_or(0)),
        _ => return Err(Failure::new(EXIT_CONFIG, "give --dataset or --input with --format")),
    };
    let loaded = load_datasets(std::slice::from_ref(&descriptor))?.remove(0);
    let n = export_canonical(&loaded.questions, dest).map_err(|e| Failure::new(EXIT_DATASET, e.to_string()))?;
    let _ = writeln!(out, "wrote {n} questions to {}", dest.display());
    Ok(())
}
