//! Per-format parsers. Each produces [`RawRecord`]s in file order.

use std::collections::BTreeMap;

use serde_json::Value;

use super::{canonical_label, question_id, DatasetError, FormatId, OptionItem, Question, MAX_OPTIONS};

/// A parsed but not yet normalised source record.
#[derive(Debug, Clone, PartialEq)]
pub enum RawRecord {
    Mmlu {
        row: usize,
        question: String,
        choices: Vec<String>,
        /// Letter (`"C"`) or zero-based index (`"2"`).
        answer: String,
        subject: Option<String>,
    },
    TruthfulQa {
        row: usize,
        question: String,
        /// `(choice text, 1 if correct else 0)` in source order.
        targets: Vec<(String, i64)>,
        category: Option<String>,
    },
    LogiQa {
        row: usize,
        answer: String,
        context: String,
        question: String,
        /// `(source label, text)` pairs.
        options: Vec<(String, String)>,
    },
    Canonical {
        row: usize,
        question: Question,
    },
}

impl RawRecord {
    pub fn row_index(&self) -> usize {
        match self {
            RawRecord::Mmlu { row, .. }
            | RawRecord::TruthfulQa { row, .. }
            | RawRecord::LogiQa { row, .. }
            | RawRecord::Canonical { row, .. } => *row,
        }
    }

    pub fn format(&self) -> FormatId {
        match self {
            RawRecord::Mmlu { .. } => FormatId::MmluCsv,
            RawRecord::TruthfulQa { .. } => FormatId::TruthfulqaMc,
            RawRecord::LogiQa { .. } => FormatId::LogiqaTxt,
            RawRecord::Canonical { .. } => FormatId::CanonicalJsonl,
        }
    }
}

fn mismatch(row: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::FormatMismatch {
        row,
        reason: reason.into(),
    }
}

pub(super) fn parse(
    format: FormatId,
    text: &str,
    limit: Option<usize>,
) -> Result<Vec<RawRecord>, DatasetError> {
    match format {
        FormatId::MmluCsv => parse_mmlu(text, limit),
        FormatId::TruthfulqaMc => parse_truthfulqa(text, limit),
        FormatId::LogiqaTxt => parse_logiqa(text, limit),
        FormatId::CanonicalJsonl => parse_canonical(text, limit),
    }
}

fn reached(limit: Option<usize>, len: usize) -> bool {
    limit.is_some_and(|n| len >= n)
}

fn parse_mmlu(text: &str, limit: Option<usize>) -> Result<Vec<RawRecord>, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = reader.records();
    let mut out = Vec::new();

    // Optional header: `question`, optional `subject`, single-letter option
    // columns and `answer`, in any order.
    let mut header: Option<(usize, Option<usize>, Vec<usize>, usize)> = None;
    let mut pending = None;
    if let Some(first) = rows.next() {
        let first = first.map_err(|e| mismatch(0, e.to_string()))?;
        if first.get(0).is_some_and(|f| f.trim().eq_ignore_ascii_case("question")) {
            let find = |name: &str| {
                first
                    .iter()
                    .position(|f| f.trim().eq_ignore_ascii_case(name))
            };
            let q = find("question").unwrap();
            let a = find("answer").ok_or_else(|| mismatch(0, "header has no `answer` column"))?;
            let mut opts = Vec::new();
            for i in 0..MAX_OPTIONS {
                match find(&canonical_label(i)) {
                    Some(col) => opts.push(col),
                    None => break,
                }
            }
            header = Some((q, find("subject"), opts, a));
        } else {
            pending = Some(first);
        }
    }

    let mut row = 0usize;
    let mut handle = |record: csv::StringRecord, out: &mut Vec<RawRecord>| -> Result<(), DatasetError> {
        let idx = row;
        row += 1;
        let fields: Vec<&str> = record.iter().collect();
        let parsed = match &header {
            Some((q, subject, opts, a)) => {
                let get = |c: usize| {
                    fields
                        .get(c)
                        .copied()
                        .ok_or_else(|| mismatch(idx, format!("missing column {c}")))
                };
                RawRecord::Mmlu {
                    row: idx,
                    question: get(*q)?.to_string(),
                    choices: opts
                        .iter()
                        .map(|&c| get(c).map(str::to_string))
                        .collect::<Result<_, _>>()?,
                    answer: get(*a)?.trim().to_string(),
                    subject: subject.and_then(|c| fields.get(c)).map(|s| s.to_string()),
                }
            }
            None => {
                if fields.len() < 3 {
                    return Err(mismatch(
                        idx,
                        format!("expected question, options and answer; got {} fields", fields.len()),
                    ));
                }
                RawRecord::Mmlu {
                    row: idx,
                    question: fields[0].to_string(),
                    choices: fields[1..fields.len() - 1].iter().map(|s| s.to_string()).collect(),
                    answer: fields[fields.len() - 1].trim().to_string(),
                    subject: None,
                }
            }
        };
        out.push(parsed);
        Ok(())
    };

    if let Some(first) = pending {
        handle(first, &mut out)?;
    }
    for record in rows {
        if reached(limit, out.len()) {
            break;
        }
        let record = record.map_err(|e| mismatch(out.len(), e.to_string()))?;
        handle(record, &mut out)?;
    }
    out.truncate(limit.unwrap_or(usize::MAX));
    Ok(out)
}

fn parse_truthfulqa(text: &str, limit: Option<usize>) -> Result<Vec<RawRecord>, DatasetError> {
    let items: Vec<Value> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| mismatch(0, format!("invalid JSON array: {e}")))?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| mismatch(i, format!("invalid JSON: {e}"))))
            .collect::<Result<_, _>>()?
    };

    let mut out = Vec::new();
    for (row, item) in items.into_iter().enumerate() {
        if reached(limit, out.len()) {
            break;
        }
        let question = item
            .get("question")
            .and_then(Value::as_str)
            .ok_or_else(|| mismatch(row, "missing string field `question`"))?
            .to_string();
        let targets = item
            .get("mc1_targets")
            .ok_or_else(|| mismatch(row, "missing `mc1_targets`"))?;
        let targets = mc1_targets(row, targets)?;
        let category = item.get("category").and_then(Value::as_str).map(str::to_string);
        out.push(RawRecord::TruthfulQa {
            row,
            question,
            targets,
            category,
        });
    }
    Ok(out)
}

/// Accepts both `{"text": 1, ...}` and `{"choices": [...], "labels": [...]}`.
fn mc1_targets(row: usize, value: &Value) -> Result<Vec<(String, i64)>, DatasetError> {
    let obj = value
        .as_object()
        .ok_or_else(|| mismatch(row, "`mc1_targets` is not an object"))?;
    if let (Some(Value::Array(choices)), Some(Value::Array(labels))) = (obj.get("choices"), obj.get("labels")) {
        if choices.len() != labels.len() {
            return Err(mismatch(row, "`choices` and `labels` differ in length"));
        }
        return choices
            .iter()
            .zip(labels)
            .map(|(c, l)| match (c.as_str(), l.as_i64()) {
                (Some(c), Some(l)) => Ok((c.to_string(), l)),
                _ => Err(mismatch(row, "non-string choice or non-integer label")),
            })
            .collect();
    }
    obj.iter()
        .map(|(k, v)| {
            v.as_i64()
                .map(|l| (k.clone(), l))
                .ok_or_else(|| mismatch(row, format!("target `{k}` has non-integer score")))
        })
        .collect()
}

fn parse_logiqa(text: &str, limit: Option<usize>) -> Result<Vec<RawRecord>, DatasetError> {
    let mut blocks: Vec<Vec<&str>> = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                blocks.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        blocks.push(current);
    }

    let mut out = Vec::new();
    for (row, block) in blocks.into_iter().enumerate() {
        if reached(limit, out.len()) {
            break;
        }
        if block.len() < 4 {
            return Err(mismatch(row, format!("record has {} lines, need at least 4", block.len())));
        }
        let answer = block[0].trim();
        if answer.len() != 1 || !answer.chars().all(|c| c.is_ascii_alphabetic()) {
            return Err(mismatch(row, format!("answer key `{answer}` is not a single letter")));
        }
        let options = block[3..]
            .iter()
            .map(|line| split_option_line(line).ok_or_else(|| mismatch(row, format!("bad option line `{line}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RawRecord::LogiQa {
            row,
            answer: answer.to_string(),
            context: block[1].trim().to_string(),
            question: block[2].trim().to_string(),
            options,
        });
    }
    Ok(out)
}

/// `"A.text"`, `"A. text"`, `"A) text"` -> `("A", "text")`.
fn split_option_line(line: &str) -> Option<(String, String)> {
    let mut chars = line.trim_start().char_indices();
    let (_, label) = chars.next().filter(|(_, c)| c.is_ascii_alphabetic())?;
    let (pos, sep) = chars.next()?;
    if !matches!(sep, '.' | ')' | '．' | ':') {
        return None;
    }
    let rest = &line.trim_start()[pos + sep.len_utf8()..];
    Some((label.to_string(), rest.trim().to_string()))
}

fn parse_canonical(text: &str, limit: Option<usize>) -> Result<Vec<RawRecord>, DatasetError> {
    let mut out = Vec::new();
    for line in text.split('\n').filter(|l| !l.trim().is_empty()) {
        if reached(limit, out.len()) {
            break;
        }
        let row = out.len();
        let question: Question =
            serde_json::from_str(line).map_err(|e| mismatch(row, format!("invalid record: {e}")))?;
        out.push(RawRecord::Canonical { row, question });
    }
    Ok(out)
}

fn check_count(row: usize, count: usize) -> Result<(), DatasetError> {
    if (2..=MAX_OPTIONS).contains(&count) {
        Ok(())
    } else {
        Err(DatasetError::OptionCountOutOfRange { row, count })
    }
}

fn labelled(texts: impl IntoIterator<Item = String>) -> Vec<OptionItem> {
    texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| OptionItem {
            label: canonical_label(i),
            text,
        })
        .collect()
}

pub(super) fn normalize(raw: RawRecord, dataset: &str) -> Result<Question, DatasetError> {
    let format = raw.format();
    let row = raw.row_index();
    let mut meta = BTreeMap::new();
    meta.insert("source_format".to_string(), format.to_string());
    meta.insert("source_row".to_string(), row.to_string());

    let question = match raw {
        RawRecord::Mmlu {
            question,
            choices,
            answer,
            subject,
            ..
        } => {
            check_count(row, choices.len())?;
            let index = answer_index(&answer).ok_or_else(|| mismatch(row, format!("unreadable answer `{answer}`")))?;
            if index >= choices.len() {
                return Err(DatasetError::MissingGold { row });
            }
            if let Some(s) = subject {
                meta.insert("category".to_string(), s);
            }
            meta.insert("source_gold".to_string(), answer);
            Question {
                id: question_id(dataset, row),
                dataset_name: dataset.to_string(),
                stem: question,
                options: labelled(choices),
                gold_label: canonical_label(index),
                metadata: meta,
            }
        }
        RawRecord::TruthfulQa {
            question,
            targets,
            category,
            ..
        } => {
            check_count(row, targets.len())?;
            let correct: Vec<usize> = targets
                .iter()
                .enumerate()
                .filter(|(_, (_, l))| *l == 1)
                .map(|(i, _)| i)
                .collect();
            let index = match correct.as_slice() {
                [i] => *i,
                [] => return Err(DatasetError::MissingGold { row }),
                _ => return Err(mismatch(row, "mc1 record has more than one correct target")),
            };
            if let Some(c) = category {
                meta.insert("category".to_string(), c);
            }
            meta.insert("task_variant".to_string(), "mc1".to_string());
            Question {
                id: question_id(dataset, row),
                dataset_name: dataset.to_string(),
                stem: question,
                options: labelled(targets.into_iter().map(|(t, _)| t)),
                gold_label: canonical_label(index),
                metadata: meta,
            }
        }
        RawRecord::LogiQa {
            answer,
            context,
            question,
            options,
            ..
        } => {
            check_count(row, options.len())?;
            let index = options
                .iter()
                .position(|(label, _)| label.eq_ignore_ascii_case(&answer))
                .ok_or(DatasetError::MissingGold { row })?;
            let source_labels: Vec<&str> = options.iter().map(|(l, _)| l.as_str()).collect();
            meta.insert("source_labels".to_string(), source_labels.join(","));
            meta.insert("source_gold".to_string(), answer.clone());
            let stem = if context.is_empty() {
                question
            } else {
                format!("{context}\n{question}")
            };
            Question {
                id: question_id(dataset, row),
                dataset_name: dataset.to_string(),
                stem,
                options: labelled(options.into_iter().map(|(_, t)| t)),
                gold_label: canonical_label(index),
                metadata: meta,
            }
        }
        RawRecord::Canonical { question, .. } => {
            if question.options.len() < 2 {
                return Err(DatasetError::OptionCountOutOfRange {
                    row,
                    count: question.options.len(),
                });
            }
            question.validate().map_err(|reason| mismatch(row, reason))?;
            return Ok(question);
        }
    };
    Ok(question)
}

fn answer_index(answer: &str) -> Option<usize> {
    let answer = answer.trim();
    if let Ok(i) = answer.parse::<usize>() {
        return Some(i);
    }
    let mut chars = answer.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if c.is_ascii_alphabetic() => Some((c.to_ascii_uppercase() as u8 - b'A') as usize),
        _ => None,
    }
}
