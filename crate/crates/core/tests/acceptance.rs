//! Acceptance checks. Prints one line per criterion and exits nonzero if any fails.
//!
//! Criterion 10 talks to a real endpoint and only runs when the key variable
//! for `ORDERBENCH_LIVE_PROVIDER` (default `openai`) is set. Optional
//! overrides: `ORDERBENCH_LIVE_MODEL`, `ORDERBENCH_LIVE_ENDPOINT`.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use orderbench::cli::run_cli;
use orderbench::datasets::{export_canonical, load_dataset};
use orderbench::providers::api_key_env_var;
use orderbench::report::build_report_from_summaries;
use orderbench::runner::{execute_run, read_manifest, ResponseCache, RunStatus, PAIRS_FILE, RECORDS_FILE};
use orderbench::stats::pearson;
use orderbench::{extract_answer, DatasetDescriptor, FormatId, PromptOrder, Provider, RunError, Runner, TemplateSet};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use common::*;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

type Criterion = (&'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("mock end-to-end determinism", || verdict(c1_determinism())),
        ("order consistency exactness (17/20)", || verdict(c2_consistency())),
        ("reflexive call discipline", || verdict(c3_calls())),
        ("pearson correctness", || verdict(c4_pearson())),
        ("extraction corpus", || verdict(c5_extraction())),
        ("prompt byte-exactness", || verdict(c6_prompts())),
        ("resume safety", || verdict(c7_resume())),
        ("dataset handling", || verdict(c8_datasets())),
        ("report structure parity", || verdict(c9_report())),
        ("live smoke (optional)", c10_live),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Verdict::Fail(format!("panicked: {msg}"))
        });
        match outcome {
            Verdict::Pass(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Verdict::Skip(detail) => println!("criterion {n:>2} SKIP  {name}: {detail}"),
            Verdict::Fail(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn verdict(c: Check) -> Verdict {
    match c {
        Ok(d) => Verdict::Pass(d),
        Err(d) => Verdict::Fail(d),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["orderbench"];
    argv.extend_from_slice(args);
    let code = run_cli(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn mock_run(out_dir: &Path) -> Result<PathBuf, String> {
    let (code, stdout, stderr) = cli(&[
        "--config",
        p(&fixture("mock_config.toml")),
        "--offline",
        "--output-dir",
        p(out_dir),
        "run",
    ]);
    ensure!(code == 0, "run exited {code}: {stderr}");
    Ok(PathBuf::from(stdout.lines().next().unwrap_or_default()))
}

const TABLES: [&str; 6] = [
    "accuracy.md",
    "consistency.md",
    "correlation.md",
    "accuracy.csv",
    "consistency.csv",
    "correlation.csv",
];

fn c1_determinism() -> Check {
    let root = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let a = mock_run(&root.path().join("a"))?;
    let b = mock_run(&root.path().join("b"))?;
    let elapsed = started.elapsed();
    let mut compared = 0;
    for f in [RECORDS_FILE, PAIRS_FILE] {
        ensure!(fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(), "{f} differs");
        compared += 1;
    }
    for f in TABLES {
        let (x, y) = (a.join("report").join(f), b.join("report").join(f));
        ensure!(fs::read(&x).unwrap() == fs::read(&y).unwrap(), "report/{f} differs");
        compared += 1;
    }
    // Bundles differ only in generation time and run ids.
    let strip = |dir: &Path| -> Vec<Value> {
        read(&dir.join("report/bundle.jsonl"))
            .lines()
            .map(|l| {
                let mut v: Value = serde_json::from_str(l).unwrap();
                if let Some(o) = v.as_object_mut() {
                    o.remove("generated_at");
                    o.remove("run_ids");
                    o.remove("run_id");
                }
                v
            })
            .collect()
    };
    ensure!(strip(&a) == strip(&b), "bundle.jsonl differs beyond timestamps and run ids");
    ensure!(elapsed < Duration::from_secs(5), "two runs took {elapsed:?}");
    Ok(format!("{} files byte-identical across two runs in {:.2}s", compared + 1, elapsed.as_secs_f64() / 2.0))
}

/// Option label a mock20 response names, read with the fixture's own phrasing
/// rather than the extraction rules.
fn scripted_label(text: &str) -> char {
    let pos = text
        .find("answer is ")
        .map(|i| i + "answer is ".len())
        .or_else(|| text.find('(').map(|i| i + 1))
        .unwrap_or(0);
    text[pos..].chars().next().unwrap()
}

fn c2_consistency() -> Check {
    let root = tempfile::tempdir().unwrap();
    let run = mock_run(root.path())?;

    let mut af = BTreeMap::new();
    let mut lf = BTreeMap::new();
    for line in read(&fixture("mock20_responses.jsonl")).lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        let label = scripted_label(v["text"].as_str().unwrap());
        match v["order"].as_str().unwrap() {
            "answer_first" => af.insert(v["question_id"].as_str().unwrap().to_string(), label),
            "logic_first" => lf.insert(v["question_id"].as_str().unwrap().to_string(), label),
            _ => None,
        };
    }
    let agree = af.iter().filter(|(q, l)| lf[*q] == **l).count();
    let total = af.len();
    ensure!((agree, total) == (17, 20), "fixture recount gives {agree}/{total}");

    let pairs: Vec<Value> = read(&run.join(PAIRS_FILE)).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let consistent = pairs.iter().filter(|p| p["consistent"] == true).count();
    ensure!((consistent, pairs.len()) == (agree, total), "pairs.jsonl has {consistent}/{}", pairs.len());
    for pr in &pairs {
        let q = pr["question_id"].as_str().unwrap();
        let a = pr["record_answer_first"]["extracted"]["label"].as_str().unwrap_or("-");
        let l = pr["record_logic_first"]["extracted"]["label"].as_str().unwrap_or("-");
        ensure!(a.starts_with(af[q]) && l.starts_with(lf[q]), "{q}: extracted {a}/{l}");
    }

    let manifest = read_manifest(&run).unwrap();
    let c = manifest.summaries[0].consistency.unwrap();
    // 17/20 in lowest terms is 17/20; the stored value must be that exact quotient.
    ensure!(c == 17.0 / 20.0 && c * 20.0 == 17.0, "summary consistency {c}");
    ensure!(read(&run.join("report/consistency.csv")) == "model,mock20\nmock-model,0.85\n", "consistency.csv");
    ensure!(read(&run.join("report/consistency.md")).contains("| mock-model | 0.850 |"), "consistency.md");

    let acc = &manifest.summaries[0].accuracy_by_strategy;
    for order in PromptOrder::ALL {
        let want = (20 - mock20_wrong(order).len()) as f64 / 20.0;
        ensure!(acc[&order] == want, "{order} accuracy {} != {want}", acc[&order]);
    }
    Ok("17/20 agreeing pairs, consistency 0.850; per-strategy accuracies match construction".into())
}

fn c3_calls() -> Check {
    let qs = mock20().questions;
    let spec = mock_spec();

    let cold = tempfile::tempdir().unwrap();
    let p = ScriptedProvider::new(mock20_pick());
    let r = Runner::new(&p, ResponseCache::open(cold.path()).unwrap());
    for (i, q) in qs.iter().enumerate() {
        r.run_reflexive(&spec, q).map_err(|e| e.to_string())?;
        ensure!(p.calls() == 3 * (i + 1), "cold: {} calls after {} questions", p.calls(), i + 1);
    }

    let warm = ScriptedProvider::new(mock20_pick());
    let r = Runner::new(&warm, ResponseCache::open(cold.path()).unwrap());
    let warm_dir = tempfile::tempdir().unwrap();
    let variants = [PromptOrder::AnswerFirst, PromptOrder::LogicFirst].into_iter().collect();
    let pre = ScriptedProvider::new(mock20_pick());
    Runner::new(&pre, ResponseCache::open(warm_dir.path()).unwrap())
        .run_suite(&spec, &qs, &variants)
        .map_err(|e| e.to_string())?;
    let r2 = Runner::new(&warm, ResponseCache::open(warm_dir.path()).unwrap());
    for (i, q) in qs.iter().enumerate() {
        r2.run_reflexive(&spec, q).map_err(|e| e.to_string())?;
        ensure!(warm.calls() == i + 1, "warm: {} calls after {} questions", warm.calls(), i + 1);
    }
    drop(r);

    for n in [1, 5, 20] {
        let dir = tempfile::tempdir().unwrap();
        let p = ScriptedProvider::new(mock20_pick());
        Runner::new(&p, ResponseCache::open(dir.path()).unwrap())
            .run_suite(&spec, &qs[..n], &all_strategies())
            .map_err(|e| e.to_string())?;
        ensure!(p.calls() == 4 * n, "full suite on {n}: {} calls", p.calls());
    }
    Ok("3 calls/question cold, 1 with warm variant cache, 4N for the full suite".into())
}

fn textbook_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

fn c4_pearson() -> Check {
    let r = |x: &[f64], y: &[f64]| pearson(x, y).map_err(|e| e.to_string());
    ensure!(r(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0])? == 1.0, "positive linear");
    ensure!(r(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0])? == -1.0, "negative linear");
    let mut rng = StdRng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut worst_affine: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=10);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let got = r(&x, &y)?;
        worst = worst.max((got - textbook_r(&x, &y).clamp(-1.0, 1.0)).abs());
        let (a, b, c, d) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0), rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
        let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        worst_affine = worst_affine.max((r(&x2, &y2)? - got).abs());
    }
    ensure!(worst <= 1e-12, "max deviation from textbook formula {worst:e}");
    ensure!(worst_affine <= 1e-12, "max affine deviation {worst_affine:e}");
    Ok(format!("exact ±1; 100 random pairs within {worst:.1e}; affine within {worst_affine:.1e}"))
}

fn c5_extraction() -> Check {
    let mut n = 0;
    for line in read(&fixture("extraction_corpus.jsonl")).lines().filter(|l| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).unwrap();
        let texts: Vec<&str> = v["options"].as_array().unwrap().iter().map(|t| t.as_str().unwrap()).collect();
        let labels: Vec<String> = (0..texts.len()).map(orderbench::datasets::canonical_label).collect();
        let labels: Vec<&str> = labels.iter().map(String::as_str).collect();
        let order: PromptOrder = v["order"].as_str().unwrap().parse().unwrap();
        let got = extract_answer(v["text"].as_str().unwrap(), &labels, &texts, order);
        ensure!(got.label.as_deref() == v["expected"].as_str(), "{}: got {:?}", v["id"], got.label);
        n += 1;
    }
    ensure!(n >= 30, "corpus has only {n} cases");
    let l = ["A", "B", "C", "D"];
    let t = ["Paris", "London", "Berlin", "Madrid"];
    let two = "The answer is B. Thinking again, the answer is D.";
    for (order, want) in [
        (PromptOrder::AnswerFirst, "B"),
        (PromptOrder::Reflexive, "B"),
        (PromptOrder::LogicFirst, "D"),
        (PromptOrder::Raw, "D"),
    ] {
        let got = extract_answer(two, &l, &t, order);
        ensure!(got.label.as_deref() == Some(want), "{order} on two-mention text picked {:?}", got.label);
    }
    Ok(format!("{n}/{n} corpus cases agree; first/last selection by order hint verified"))
}

fn c6_prompts() -> Check {
    let af = "Please give out the correct option in the first sentence and then give out the logic.";
    let lf = "Please give out the reasoning logic first and then answer the question by selecting the options.";
    let review = "Here I want you to review the logic of the two results and give me the final answer.";
    let t = TemplateSet::builtin();
    let q = &mock20().questions[0];
    let base = t.render_variant(q, PromptOrder::Raw).unwrap().text;
    ensure!(t.render_variant(q, PromptOrder::AnswerFirst).unwrap().text == format!("{base}\n{af}"), "answer-first");
    ensure!(t.render_variant(q, PromptOrder::LogicFirst).unwrap().text == format!("{base}\n{lf}"), "logic-first");
    let refl = t.render_reflexive(q, "R1", "R2").unwrap().text;
    let head = "Each time I asked you twice, once I asked you to give me the answer first then the logic, \
once I asked you to give me the logic first then the answer, and sometimes the two answers are different. ";
    let want = format!("Original Question: {base}\n\n{head}{review}\n\nResult 1: R1\n\nResult 2: R2");
    ensure!(refl == want, "reflexive prompt differs:\n{refl}");
    Ok("answer-first, logic-first and reflexive texts match byte for byte".into())
}

fn c7_resume() -> Check {
    let root = tempfile::tempdir().unwrap();
    let total = 80;
    let reference = Arc::new(ScriptedProvider::new(mock20_pick()));
    let rp = reference.clone();
    let full = execute_run(&mock20_plan("run-x", &root.path().join("full"), 4), &move |_| {
        Ok(Box::new(rp.clone()) as Box<dyn Provider>)
    })
    .map_err(|e| e.to_string())?;

    let dir = root.path().join("resumed");
    let mut killed = ScriptedProvider::new(mock20_pick());
    killed.fail_after = Some(total / 2);
    let killed = Arc::new(killed);
    let kp = killed.clone();
    match execute_run(&mock20_plan("run-y", &dir, 4), &move |_| Ok(Box::new(kp.clone()) as Box<dyn Provider>)) {
        Err(RunError::AbortedRun { .. }) => {}
        other => return Err(format!("interrupted run did not abort: {:?}", other.map(|_| ()))),
    }
    ensure!(read_manifest(&dir).unwrap().status == RunStatus::Aborted, "manifest not marked aborted");
    let done = killed.fingerprints();

    let again = Arc::new(ScriptedProvider::new(mock20_pick()));
    let ap = again.clone();
    let resumed = execute_run(&mock20_plan("run-y", &dir, 4), &move |_| Ok(Box::new(ap.clone()) as Box<dyn Provider>))
        .map_err(|e| e.to_string())?;
    let second = again.fingerprints();
    let dupes = done.keys().filter(|k| second.contains_key(*k)).count();
    ensure!(dupes == 0, "{dupes} completed fingerprints queried again");
    ensure!(done.len() + second.len() == total, "{} + {} calls", done.len(), second.len());
    for f in [RECORDS_FILE, PAIRS_FILE] {
        ensure!(read(&root.path().join("full").join(f)) == read(&dir.join(f)), "{f} differs from uninterrupted run");
    }
    let a = build_report_from_summaries(&full.manifest.summaries).unwrap();
    let b = build_report_from_summaries(&resumed.manifest.summaries).unwrap();
    ensure!(
        a.accuracy_markdown() == b.accuracy_markdown()
            && a.consistency_markdown() == b.consistency_markdown()
            && a.accuracy_csv() == b.accuracy_csv()
            && a.consistency_csv() == b.consistency_csv(),
        "report differs from uninterrupted run"
    );
    Ok(format!("killed after {} of {total} calls; resume issued {} calls, 0 duplicates; outputs identical", done.len(), second.len()))
}

fn c8_datasets() -> Check {
    let d = DatasetDescriptor::new("logiqa", FormatId::LogiqaTxt, fixture("logiqa_1200.txt"), 1000);
    let loaded = load_dataset(&d).map_err(|e| e.to_string())?;
    ensure!(loaded.questions.len() == 1000, "loaded {}", loaded.questions.len());
    let blocks: Vec<String> = read(&fixture("logiqa_1200.txt"))
        .split("\n\n")
        .filter(|b| !b.trim().is_empty())
        .map(|b| b.lines().nth(2).unwrap().to_string())
        .collect();
    ensure!(blocks.len() == 1200, "fixture has {} records", blocks.len());
    for (i, q) in loaded.questions.iter().enumerate() {
        ensure!(q.id == format!("logiqa-{i:06}"), "row {i} has id {}", q.id);
        ensure!(q.stem.ends_with(&blocks[i]), "row {i} is not record {i} of the file");
    }
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("canonical.jsonl");
    export_canonical(&loaded.questions, &out).map_err(|e| e.to_string())?;
    let back = load_dataset(&DatasetDescriptor::new("logiqa", FormatId::CanonicalJsonl, &out, 0)).map_err(|e| e.to_string())?;
    ensure!(back.questions == loaded.questions, "canonical round trip is lossy");
    Ok("first 1000 of 1200 records in file order; canonical export reloads identically".into())
}

fn c9_report() -> Check {
    let grid = ReferenceGrid::load();
    // gpt and llama consistency rows are exchanged; see the ledger.
    let exchanged = |m: &str| match m {
        "gpt" => "llama".to_string(),
        "llama" => "gpt".to_string(),
        other => other.to_string(),
    };
    let bundle = build_report_from_summaries(&grid.summaries(exchanged)).map_err(|e| e.to_string())?;
    let acc = bundle.accuracy_markdown();
    let mut blocks = 0;
    let mut dataset = String::new();
    let mut bold_rows = 0;
    for line in acc.lines() {
        if let Some(d) = line.strip_prefix("## ") {
            dataset = d.to_string();
            blocks += 1;
            continue;
        }
        let cells: Vec<&str> = line.trim_matches('|').split('|').map(str::trim).collect();
        let Some(rows) = grid.bold.get(cells[0]) else { continue };
        ensure!(cells.len() == 5, "{line}");
        let bolded: Vec<PromptOrder> = grid
            .strategies
            .iter()
            .zip(&cells[1..])
            .filter(|(_, c)| c.starts_with("**"))
            .map(|(s, _)| *s)
            .collect();
        ensure!(bolded == rows[&dataset], "{} / {dataset}: bolded {bolded:?}", cells[0]);
        bold_rows += 1;
    }
    ensure!(blocks == 3 && bold_rows == 12, "{blocks} accuracy blocks, {bold_rows} model rows");
    let ties = grid.bold.values().flat_map(|d| d.values()).filter(|b| b.len() > 1).count();
    ensure!(ties >= 2, "reference grid has {ties} tied rows");

    let rows = |md: &str| md.lines().filter(|l| l.starts_with('|')).skip(2).map(|l| l.matches('|').count() - 1).collect::<Vec<_>>();
    let cons = rows(&bundle.consistency_markdown());
    ensure!(cons == vec![4; 4], "consistency table shape {cons:?}");
    let corr: Vec<usize> = rows(&bundle.correlation_markdown());
    ensure!(corr == vec![5; 3], "correlation table shape {corr:?}");
    ensure!(bundle.correlation.iter().all(|c| c.n_models == 4 && c.r.is_some()), "correlation cells incomplete");
    let mut worst: f64 = 0.0;
    for d in &grid.datasets {
        for s in &grid.strategies {
            let got = bundle.correlation_cell(d, *s).and_then(|c| c.r).ok_or(format!("{d}/{s} missing"))?;
            worst = worst.max((got - grid.correlation[d][s]).abs());
        }
    }
    ensure!(worst <= 1e-3, "correlation block off by {worst}");
    Ok(format!(
        "3 accuracy blocks of 4x4, 4x3 consistency, 3x4 correlation; row maxima bolded incl. {ties} ties; r within {worst:.1e}"
    ))
}

fn c10_live() -> Verdict {
    let provider = std::env::var("ORDERBENCH_LIVE_PROVIDER").unwrap_or_else(|_| "openai".into());
    let key_var = api_key_env_var(&provider);
    if std::env::var(&key_var).map_or(true, |k| k.is_empty()) {
        return Verdict::Skip(format!("{key_var} not set"));
    }
    let model = std::env::var("ORDERBENCH_LIVE_MODEL").unwrap_or_else(|_| "gpt-4o-mini".into());
    let endpoint = std::env::var("ORDERBENCH_LIVE_ENDPOINT")
        .unwrap_or_else(|_| "https://api.openai.com/v1/chat/completions".into());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("live.toml");
    let text = format!(
        "strategies = [\"raw\", \"answer_first\", \"logic_first\", \"reflexive\"]\nparallelism = 2\n\n\
[[models]]\nprovider_id = {provider:?}\nmodel_name = {model:?}\nendpoint_url = {endpoint:?}\n\n\
[[datasets]]\nname = \"mmlu\"\nformat = \"mmlu_csv\"\npath = {:?}\nlimit = 10\n",
        p(&fixture("mmlu_smoke.csv"))
    );
    fs::write(&cfg, text).unwrap();
    let (code, stdout, stderr) = cli(&["--config", p(&cfg), "--output-dir", p(&dir.path().join("runs")), "run"]);
    if code != 0 {
        return Verdict::Fail(format!("exit {code}: {}", stderr.trim()));
    }
    let run = PathBuf::from(stdout.lines().next().unwrap_or_default());
    let m = match read_manifest(&run) {
        Ok(m) => m,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    if !m.errors.is_empty() {
        return Verdict::Fail(format!("{} question failures, first: {}", m.errors.len(), m.errors[0].detail));
    }
    let acc = read(&run.join("report/accuracy.csv"));
    let lines: Vec<&str> = acc.lines().collect();
    if lines.len() != 2 || lines[1].split(',').count() != 6 || m.summaries[0].counted != 10 {
        return Verdict::Fail(format!("malformed report: {acc}"));
    }
    Verdict::Pass(format!("10 questions via {model}, {} queries, report well-formed", m.totals.queries_issued))
}
