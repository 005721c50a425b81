//! Multiple-choice dataset ingestion.
//!
//! Every supported source format is normalised into [`Question`] records with
//! canonical option labels `A`, `B`, `C`, ... in source order. The original
//! labels and answer key are preserved in [`Question::metadata`].

mod formats;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

pub use formats::RawRecord;

/// Largest option count the canonical label alphabet supports.
pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset file not found: {0}")]
    FileMissing(PathBuf),
    #[error("record {row}: {reason}")]
    FormatMismatch { row: usize, reason: String },
    #[error("dataset contains no questions")]
    EmptyDataset,
    #[error("record {row}: no gold answer among the options")]
    MissingGold { row: usize },
    #[error("record {row}: {count} options (need 2..={max})", max = MAX_OPTIONS)]
    OptionCountOutOfRange { row: usize, count: usize },
    #[error("I/O failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Source file grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatId {
    /// MMLU CSV: `question,A,B,C,D,answer`, optional header row.
    MmluCsv,
    /// TruthfulQA multiple-choice JSON / JSONL with `mc1_targets`.
    TruthfulqaMc,
    /// LogiQA plain text: blank-line separated 8-line records.
    LogiqaTxt,
    /// This crate's own newline-delimited record format.
    CanonicalJsonl,
}

impl FormatId {
    pub fn as_str(self) -> &'static str {
        match self {
            FormatId::MmluCsv => "mmlu_csv",
            FormatId::TruthfulqaMc => "truthfulqa_mc",
            FormatId::LogiqaTxt => "logiqa_txt",
            FormatId::CanonicalJsonl => "canonical_jsonl",
        }
    }
}

impl fmt::Display for FormatId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormatId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mmlu_csv" => Ok(FormatId::MmluCsv),
            "truthfulqa_mc" => Ok(FormatId::TruthfulqaMc),
            "logiqa_txt" => Ok(FormatId::LogiqaTxt),
            "canonical_jsonl" => Ok(FormatId::CanonicalJsonl),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub name: String,
    pub format: FormatId,
    pub source_path: PathBuf,
    /// Number of leading questions to keep; 0 keeps everything.
    pub limit: usize,
    /// SHA-256 of the raw source bytes. Filled in by [`load_dataset`].
    #[serde(default)]
    pub content_hash: String,
}

impl DatasetDescriptor {
    pub fn new(
        name: impl Into<String>,
        format: FormatId,
        source_path: impl Into<PathBuf>,
        limit: usize,
    ) -> Self {
        Self {
            name: name.into(),
            format,
            source_path: source_path.into(),
            limit,
            content_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OptionItem {
    pub label: String,
    pub text: String,
}

/// One normalised multiple-choice item.
///
/// Serialises to the canonical dataset record schema
/// (`id`, `dataset`, `stem`, `options`, `gold`, `meta`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    pub stem: String,
    pub options: Vec<OptionItem>,
    #[serde(rename = "gold")]
    pub gold_label: String,
    #[serde(rename = "meta", default)]
    pub metadata: BTreeMap<String, String>,
}

impl Question {
    pub fn option_labels(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.label.as_str()).collect()
    }

    pub fn option_texts(&self) -> Vec<&str> {
        self.options.iter().map(|o| o.text.as_str()).collect()
    }

    /// Checks the label alphabet and gold invariants. Returns a reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if self.options.len() < 2 || self.options.len() > MAX_OPTIONS {
            return Err(format!("{} options", self.options.len()));
        }
        for (i, opt) in self.options.iter().enumerate() {
            let expected = canonical_label(i);
            if opt.label != expected {
                return Err(format!(
                    "option {i} has label `{}`, expected `{expected}`",
                    opt.label
                ));
            }
        }
        if !self.options.iter().any(|o| o.label == self.gold_label) {
            return Err(format!("gold `{}` is not an option label", self.gold_label));
        }
        Ok(())
    }
}

/// `0 -> "A"`, `1 -> "B"`, ...
pub fn canonical_label(index: usize) -> String {
    assert!(index < MAX_OPTIONS, "option index {index} out of range");
    char::from(b'A' + index as u8).to_string()
}

/// Stable per-dataset question id derived from the source row index.
pub fn question_id(dataset: &str, row: usize) -> String {
    format!("{dataset}-{row:06}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDataset {
    pub descriptor: DatasetDescriptor,
    pub questions: Vec<Question>,
}

/// Loads and normalises a dataset, returning questions in file order.
pub fn load_dataset(descriptor: &DatasetDescriptor) -> Result<LoadedDataset, DatasetError> {
    let path = &descriptor.source_path;
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(DatasetError::FileMissing(path.clone()))
        }
        Err(source) => {
            return Err(DatasetError::IoFailure {
                path: path.clone(),
                source,
            })
        }
    };
    let content_hash = sha256_hex(&bytes);
    let text = String::from_utf8(bytes).map_err(|e| DatasetError::FormatMismatch {
        row: 0,
        reason: format!("file is not valid UTF-8: {e}"),
    })?;

    let limit = (descriptor.limit > 0).then_some(descriptor.limit);
    let raw = formats::parse(descriptor.format, &text, limit)?;

    let mut questions = Vec::with_capacity(raw.len());
    let mut seen = HashSet::new();
    for record in raw {
        let row = record.row_index();
        let q = normalize_record(record, &descriptor.name)?;
        if !seen.insert(q.id.clone()) {
            return Err(DatasetError::FormatMismatch {
                row,
                reason: format!("duplicate question id `{}`", q.id),
            });
        }
        questions.push(q);
    }
    if questions.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }

    let mut descriptor = descriptor.clone();
    descriptor.content_hash = content_hash;
    Ok(LoadedDataset {
        descriptor,
        questions,
    })
}

/// Converts one parsed source record into a [`Question`] with canonical labels.
pub fn normalize_record(raw: RawRecord, dataset_name: &str) -> Result<Question, DatasetError> {
    formats::normalize(raw, dataset_name)
}

/// Writes `questions` as canonical JSONL. Returns the number of records written.
pub fn export_canonical(questions: &[Question], path: &Path) -> Result<usize, DatasetError> {
    if questions.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let io_err = |source| DatasetError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let file = fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    for q in questions {
        let line = serde_json::to_string(q).expect("question serialises");
        out.write_all(line.as_bytes()).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    Ok(questions.len())
}
