//! Accuracy, consistency and correlation tables.
//!
//! A [`ReportBundle`] stores cells rather than rendered text; the markdown and
//! CSV emitters lay them out as:
//!
//! * accuracy: one models x strategies block per dataset,
//! * consistency: models x datasets,
//! * correlation: datasets x strategies.
//!
//! Models are sorted by name. Datasets keep the order in which they first
//! appear in the input summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::PromptOrder;
use crate::stats::{correlation_table, CorrelationCell, RunSummary, StatsError};

pub const REPORT_DIR: &str = "report";
pub const NOT_AVAILABLE: &str = "n/a";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no run summaries to report")]
    EmptyInput,
    #[error("model {model} on dataset {dataset} appears in more than one run")]
    DuplicateSummary { model: String, dataset: String },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle line {line}: {reason}")]
    BadBundle { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyCell {
    pub dataset: String,
    pub model: String,
    pub strategy: PromptOrder,
    pub value: f64,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCell {
    pub model: String,
    pub dataset: String,
    pub value: f64,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub generated_at: String,
    pub run_ids: Vec<String>,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub strategies: Vec<PromptOrder>,
    pub accuracy: Vec<AccuracyCell>,
    pub consistency: Vec<ConsistencyCell>,
    pub correlation: Vec<CorrelationCell>,
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BundleLine {
    Header {
        generated_at: String,
        run_ids: Vec<String>,
        models: Vec<String>,
        datasets: Vec<String>,
        strategies: Vec<PromptOrder>,
        notes: Vec<String>,
    },
    Accuracy(AccuracyCell),
    Consistency(ConsistencyCell),
    Correlation(CorrelationCell),
}

/// Builds a bundle from summaries, computing the correlation table.
pub fn build_report_from_summaries(summaries: &[RunSummary]) -> Result<ReportBundle, ReportError> {
    let mut notes = Vec::new();
    let cells = match correlation_table(summaries) {
        Ok(c) => c,
        Err(StatsError::InsufficientModels(n)) => {
            notes.push(format!("correlation table omitted: InsufficientModels ({n} model(s), need at least 2)"));
            Vec::new()
        }
        Err(e) => {
            notes.push(format!("correlation table omitted: {e}"));
            Vec::new()
        }
    };
    let mut bundle = build_report(summaries, &cells)?;
    bundle.notes.splice(0..0, notes);
    Ok(bundle)
}

pub fn build_report(summaries: &[RunSummary], cells: &[CorrelationCell]) -> Result<ReportBundle, ReportError> {
    if summaries.is_empty() {
        return Err(ReportError::EmptyInput);
    }
    let mut seen = BTreeSet::new();
    for s in summaries {
        if !seen.insert((&s.model_name, &s.dataset_name)) {
            return Err(ReportError::DuplicateSummary {
                model: s.model_name.clone(),
                dataset: s.dataset_name.clone(),
            });
        }
    }

    let mut models: Vec<String> = summaries.iter().map(|s| s.model_name.clone()).collect();
    models.sort();
    models.dedup();
    let mut datasets: Vec<String> = Vec::new();
    for s in summaries {
        if !datasets.contains(&s.dataset_name) {
            datasets.push(s.dataset_name.clone());
        }
    }
    let mut run_ids: Vec<String> = Vec::new();
    for s in summaries {
        if !run_ids.contains(&s.run_id) {
            run_ids.push(s.run_id.clone());
        }
    }
    let strategies: Vec<PromptOrder> = PromptOrder::ALL
        .into_iter()
        .filter(|o| summaries.iter().any(|s| s.accuracy_by_strategy.contains_key(o)))
        .collect();

    let by_key: BTreeMap<(&str, &str), &RunSummary> = summaries
        .iter()
        .map(|s| ((s.model_name.as_str(), s.dataset_name.as_str()), s))
        .collect();

    let mut accuracy = Vec::new();
    let mut consistency = Vec::new();
    let mut notes = Vec::new();
    for dataset in &datasets {
        for model in &models {
            let Some(s) = by_key.get(&(model.as_str(), dataset.as_str())) else { continue };
            for strategy in &strategies {
                if let Some(v) = s.accuracy_by_strategy.get(strategy) {
                    accuracy.push(AccuracyCell {
                        dataset: dataset.clone(),
                        model: model.clone(),
                        strategy: *strategy,
                        value: *v,
                        run_id: s.run_id.clone(),
                    });
                }
            }
        }
    }
    for model in &models {
        for dataset in &datasets {
            let Some(s) = by_key.get(&(model.as_str(), dataset.as_str())) else { continue };
            if let Some(v) = s.consistency {
                consistency.push(ConsistencyCell {
                    model: model.clone(),
                    dataset: dataset.clone(),
                    value: v,
                    run_id: s.run_id.clone(),
                });
            }
            if s.excluded > 0 {
                notes.push(format!(
                    "{model} / {dataset}: {} of {} questions excluded after failed queries",
                    s.excluded,
                    s.counted + s.excluded
                ));
            }
        }
    }
    for cell in cells {
        if let Some(flag) = cell.flag {
            notes.push(format!(
                "correlation {} / {}: {} (n_models = {})",
                cell.dataset_name,
                cell.strategy,
                flag.as_str(),
                cell.n_models
            ));
        }
    }

    Ok(ReportBundle {
        generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        run_ids,
        models,
        datasets,
        strategies,
        accuracy,
        consistency,
        correlation: cells.to_vec(),
        notes,
    })
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn flagged(cell: &CorrelationCell) -> String {
    match (cell.r, cell.flag) {
        (_, Some(flag)) => format!("—({})", flag.as_str()),
        (Some(r), None) => fmt3(r),
        (None, None) => NOT_AVAILABLE.to_string(),
    }
}

impl ReportBundle {
    pub fn accuracy_value(&self, dataset: &str, model: &str, strategy: PromptOrder) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|c| c.dataset == dataset && c.model == model && c.strategy == strategy)
            .map(|c| c.value)
    }

    pub fn consistency_value(&self, model: &str, dataset: &str) -> Option<f64> {
        self.consistency
            .iter()
            .find(|c| c.model == model && c.dataset == dataset)
            .map(|c| c.value)
    }

    pub fn correlation_cell(&self, dataset: &str, strategy: PromptOrder) -> Option<&CorrelationCell> {
        self.correlation
            .iter()
            .find(|c| c.dataset_name == dataset && c.strategy == strategy)
    }

    /// Datasets that have at least one correlation cell, in dataset order.
    fn correlation_datasets(&self) -> Vec<&String> {
        self.datasets
            .iter()
            .filter(|d| self.correlation.iter().any(|c| &c.dataset_name == *d))
            .collect()
    }

    /// `<dataset>` header line plus one pipe table per dataset. Row maxima
    /// (compared at display precision, ties included) are bolded.
    pub fn accuracy_markdown(&self) -> String {
        let mut out = String::from("# Accuracy by prompt strategy\n");
        for dataset in &self.datasets {
            let _ = write!(out, "\n## {dataset}\n\n| Model |");
            for s in &self.strategies {
                let _ = write!(out, " {} |", s.title());
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(self.strategies.len()));
            out.push('\n');
            for model in &self.models {
                let values: Vec<Option<String>> = self
                    .strategies
                    .iter()
                    .map(|s| self.accuracy_value(dataset, model, *s).map(fmt3))
                    .collect();
                let best = values.iter().flatten().max().cloned();
                let _ = write!(out, "| {model} |");
                for v in &values {
                    match v {
                        Some(v) if Some(v) == best.as_ref() => {
                            let _ = write!(out, " **{v}** |");
                        }
                        Some(v) => {
                            let _ = write!(out, " {v} |");
                        }
                        None => {
                            let _ = write!(out, " {NOT_AVAILABLE} |");
                        }
                    }
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn consistency_markdown(&self) -> String {
        let mut out = String::from("# Answer-first / logic-first consistency\n\n| Model |");
        for d in &self.datasets {
            let _ = write!(out, " {d} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.datasets.len()));
        out.push('\n');
        for model in &self.models {
            let _ = write!(out, "| {model} |");
            for d in &self.datasets {
                let v = self.consistency_value(model, d).map_or(NOT_AVAILABLE.to_string(), fmt3);
                let _ = write!(out, " {v} |");
            }
            out.push('\n');
        }
        out
    }

    pub fn correlation_markdown(&self) -> String {
        let mut out = String::from("# Pearson correlation between consistency and accuracy\n\n");
        let datasets = self.correlation_datasets();
        if datasets.is_empty() {
            out.push_str("No correlation cells.\n");
        } else {
            out.push_str("| Dataset |");
            for s in &self.strategies {
                let _ = write!(out, " {} |", s.title());
            }
            out.push_str("\n|---|");
            out.push_str(&"---|".repeat(self.strategies.len()));
            out.push('\n');
            for d in datasets {
                let _ = write!(out, "| {d} |");
                for s in &self.strategies {
                    let v = self.correlation_cell(d, *s).map_or(NOT_AVAILABLE.to_string(), flagged);
                    let _ = write!(out, " {v} |");
                }
                out.push('\n');
            }
        }
        if !self.notes.is_empty() {
            out.push_str("\nNotes:\n\n");
            for n in &self.notes {
                let _ = writeln!(out, "- {n}");
            }
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["dataset".to_string(), "model".to_string()];
        header.extend(self.strategies.iter().map(|s| s.as_str().to_string()));
        w.write_record(&header).expect("in-memory csv");
        for dataset in &self.datasets {
            for model in &self.models {
                let mut row = vec![dataset.clone(), model.clone()];
                row.extend(self.strategies.iter().map(|s| {
                    self.accuracy_value(dataset, model, *s)
                        .map_or(NOT_AVAILABLE.to_string(), |v| v.to_string())
                }));
                w.write_record(&row).expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn consistency_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["model".to_string()];
        header.extend(self.datasets.iter().cloned());
        w.write_record(&header).expect("in-memory csv");
        for model in &self.models {
            let mut row = vec![model.clone()];
            row.extend(self.datasets.iter().map(|d| {
                self.consistency_value(model, d)
                    .map_or(NOT_AVAILABLE.to_string(), |v| v.to_string())
            }));
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn correlation_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["dataset".to_string()];
        header.extend(self.strategies.iter().map(|s| s.as_str().to_string()));
        w.write_record(&header).expect("in-memory csv");
        for d in self.correlation_datasets() {
            let mut row = vec![d.clone()];
            row.extend(self.strategies.iter().map(|s| {
                self.correlation_cell(d, *s).map_or(NOT_AVAILABLE.to_string(), |c| match (c.r, c.flag) {
                    (_, Some(flag)) => format!("—({})", flag.as_str()),
                    (Some(r), None) => r.to_string(),
                    (None, None) => NOT_AVAILABLE.to_string(),
                })
            }));
            w.write_record(&row).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn to_json_lines(&self) -> String {
        let mut lines = vec![BundleLine::Header {
            generated_at: self.generated_at.clone(),
            run_ids: self.run_ids.clone(),
            models: self.models.clone(),
            datasets: self.datasets.clone(),
            strategies: self.strategies.clone(),
            notes: self.notes.clone(),
        }];
        lines.extend(self.accuracy.iter().cloned().map(BundleLine::Accuracy));
        lines.extend(self.consistency.iter().cloned().map(BundleLine::Consistency));
        lines.extend(self.correlation.iter().cloned().map(BundleLine::Correlation));
        let mut out = String::new();
        for line in &lines {
            out.push_str(&serde_json::to_string(line).expect("bundle line serialises"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<Self, ReportError> {
        let mut bundle: Option<ReportBundle> = None;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let parsed: BundleLine = serde_json::from_str(line).map_err(|e| ReportError::BadBundle {
                line: i + 1,
                reason: e.to_string(),
            })?;
            match (parsed, bundle.as_mut()) {
                (
                    BundleLine::Header {
                        generated_at,
                        run_ids,
                        models,
                        datasets,
                        strategies,
                        notes,
                    },
                    None,
                ) => {
                    bundle = Some(ReportBundle {
                        generated_at,
                        run_ids,
                        models,
                        datasets,
                        strategies,
                        accuracy: Vec::new(),
                        consistency: Vec::new(),
                        correlation: Vec::new(),
                        notes,
                    })
                }
                (BundleLine::Header { .. }, Some(_)) => {
                    return Err(ReportError::BadBundle {
                        line: i + 1,
                        reason: "second header".into(),
                    })
                }
                (_, None) => {
                    return Err(ReportError::BadBundle {
                        line: i + 1,
                        reason: "cell before header".into(),
                    })
                }
                (BundleLine::Accuracy(c), Some(b)) => b.accuracy.push(c),
                (BundleLine::Consistency(c), Some(b)) => b.consistency.push(c),
                (BundleLine::Correlation(c), Some(b)) => b.correlation.push(c),
            }
        }
        bundle.ok_or(ReportError::BadBundle {
            line: 0,
            reason: "empty bundle".into(),
        })
    }

    /// Writes the bundle in `format` under `dir`; returns bytes written.
    pub fn emit(&self, format: ReportFormat, dir: &Path) -> Result<usize, ReportError> {
        let files: Vec<(&str, String)> = match format {
            ReportFormat::Markdown => vec![
                ("accuracy.md", self.accuracy_markdown()),
                ("consistency.md", self.consistency_markdown()),
                ("correlation.md", self.correlation_markdown()),
            ],
            ReportFormat::Csv => vec![
                ("accuracy.csv", self.accuracy_csv()),
                ("consistency.csv", self.consistency_csv()),
                ("correlation.csv", self.correlation_csv()),
            ],
            ReportFormat::JsonLines => vec![("bundle.jsonl", self.to_json_lines())],
        };
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ReportError::IoFailure { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut written = 0;
        for (name, contents) in files {
            let path = dir.join(name);
            fs::write(&path, &contents).map_err(io(&path))?;
            written += contents.len();
        }
        Ok(written)
    }

    /// Writes all three formats under `dir`.
    pub fn emit_all(&self, dir: &Path) -> Result<usize, ReportError> {
        let mut total = 0;
        for f in [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::JsonLines] {
            total += self.emit(f, dir)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(model: &str, dataset: &str, cons: Option<f64>, acc: &[(PromptOrder, f64)]) -> RunSummary {
        RunSummary {
            run_id: format!("run-{model}"),
            model_name: model.into(),
            dataset_name: dataset.into(),
            accuracy_by_strategy: acc.iter().copied().collect(),
            consistency: cons,
            counted: 10,
            excluded: 0,
        }
    }

    #[test]
    fn single_summary_layout() {
        let s = [summary("m", "d", Some(0.8), &[(PromptOrder::Raw, 0.5), (PromptOrder::AnswerFirst, 0.6)])];
        let b = build_report_from_summaries(&s).unwrap();
        assert_eq!(b.models, ["m"]);
        assert_eq!(b.strategies.len(), 2);
        assert_eq!(b.consistency.len(), 1);
        assert!(b.correlation.is_empty());
        assert!(b.notes[0].contains("InsufficientModels"));
        assert!(b.correlation_markdown().contains("No correlation cells."));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(build_report(&[], &[]), Err(ReportError::EmptyInput)));
    }

    #[test]
    fn duplicate_summary_rejected() {
        let s = [
            summary("m", "d", Some(0.8), &[(PromptOrder::Raw, 0.5)]),
            summary("m", "d", Some(0.7), &[(PromptOrder::Raw, 0.4)]),
        ];
        assert!(matches!(build_report(&s, &[]), Err(ReportError::DuplicateSummary { .. })));
    }

    #[test]
    fn ties_are_all_bolded() {
        let s = [summary(
            "gemini",
            "mmlu",
            Some(0.786),
            &[
                (PromptOrder::Raw, 0.717),
                (PromptOrder::AnswerFirst, 0.714),
                (PromptOrder::LogicFirst, 0.769),
                (PromptOrder::Reflexive, 0.769),
            ],
        )];
        let md = build_report(&s, &[]).unwrap().accuracy_markdown();
        assert!(md.contains("| gemini | 0.717 | 0.714 | **0.769** | **0.769** |"), "{md}");
    }

    #[test]
    fn missing_cells_render_na() {
        let s = [
            summary("a", "d1", Some(0.5), &[(PromptOrder::Raw, 0.5)]),
            summary("b", "d2", None, &[(PromptOrder::Raw, 0.25)]),
        ];
        let b = build_report(&s, &[]).unwrap();
        assert!(b.consistency_markdown().contains("| a | 0.500 | n/a |"));
        assert!(b.consistency_markdown().contains("| b | n/a | n/a |"));
        assert!(b.accuracy_csv().contains("d1,b,n/a"));
    }

    #[test]
    fn flagged_correlation_cell() {
        let s = [
            summary("a", "d", Some(0.5), &[(PromptOrder::Raw, 0.5)]),
            summary("b", "d", Some(0.5), &[(PromptOrder::Raw, 0.6)]),
        ];
        let b = build_report_from_summaries(&s).unwrap();
        assert!(b.correlation_markdown().contains("| d | —(degenerate_variance) |"));
        assert!(b.correlation_csv().contains("d,—(degenerate_variance)"));
    }

    #[test]
    fn consistency_csv_header_follows_dataset_order() {
        let s = [
            summary("m", "logiqa", Some(0.8), &[(PromptOrder::Raw, 0.5)]),
            summary("m", "truthfulqa", Some(0.8), &[(PromptOrder::Raw, 0.5)]),
            summary("m", "mmlu", Some(0.8), &[(PromptOrder::Raw, 0.5)]),
        ];
        let csv = build_report(&s, &[]).unwrap().consistency_csv();
        assert_eq!(csv.lines().next(), Some("model,logiqa,truthfulqa,mmlu"));
    }
}
