//! Option-label extraction from free-form model responses.
//!
//! Three rules are tried in strict precedence and the first one that matches
//! anywhere in the text decides the answer:
//!
//! 1. a marker phrase ("final answer", "the answer is", ...) followed within
//!    [`MARKER_WINDOW`] characters by an option label, optionally parenthesised;
//! 2. an option label token at the start of a line (`B.`, `(C)`, `**D**`, `Option B`);
//! 3. a case-insensitive occurrence of a full option text.
//!
//! Marker phrases are tried one at a time in file order. Within the winning
//! rule the order hint only picks the occurrence: answer-first and reflexive
//! responses lead with their verdict, so the first occurrence is taken;
//! logic-first and raw responses conclude with it, so the last one is.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::prompts::PromptOrder;

/// Maximum distance, in characters, between a marker phrase and its label.
pub const MARKER_WINDOW: usize = 10;

const BUILTIN_MARKERS: &str = include_str!("../resources/answer_markers.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractStatus {
    Parsed,
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub status: ExtractStatus,
    pub label: Option<String>,
    /// `marker:<phrase>`, `line_label`, `option_text` or `none`.
    pub rule_fired: String,
    /// Byte offsets of the matched label or option text.
    pub match_span: Option<(usize, usize)>,
}

impl ExtractedAnswer {
    pub fn unparsed() -> Self {
        Self {
            status: ExtractStatus::Unparsed,
            label: None,
            rule_fired: "none".to_string(),
            match_span: None,
        }
    }

    pub fn is_parsed(&self) -> bool {
        self.status == ExtractStatus::Parsed
    }

    fn parsed(label: &str, rule: String, span: (usize, usize)) -> Self {
        Self {
            status: ExtractStatus::Parsed,
            label: Some(label.to_string()),
            rule_fired: rule,
            match_span: Some(span),
        }
    }
}

/// Ordered marker phrases for rule 1. Stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerList {
    phrases: Vec<String>,
}

impl MarkerList {
    /// One phrase per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Self {
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.to_ascii_lowercase())
            .collect();
        Self { phrases }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn builtin() -> &'static MarkerList {
        static BUILTIN: OnceLock<MarkerList> = OnceLock::new();
        BUILTIN.get_or_init(|| MarkerList::parse(BUILTIN_MARKERS))
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn extract(
        &self,
        text: &str,
        option_labels: &[&str],
        option_texts: &[&str],
        order_hint: PromptOrder,
    ) -> ExtractedAnswer {
        let pick_last = matches!(order_hint, PromptOrder::LogicFirst | PromptOrder::Raw);
        let choose = |mut hits: Vec<(String, (usize, usize))>| {
            if pick_last {
                hits.pop()
            } else {
                hits.into_iter().next()
            }
        };

        let lower = text.to_ascii_lowercase();
        for phrase in &self.phrases {
            let hits = marker_hits(text, &lower, phrase, option_labels);
            if let Some((label, span)) = choose(hits) {
                return ExtractedAnswer::parsed(&label, format!("marker:{phrase}"), span);
            }
        }
        if let Some((label, span)) = choose(line_label_hits(text, option_labels)) {
            return ExtractedAnswer::parsed(&label, "line_label".to_string(), span);
        }
        if let Some((label, span)) = choose(option_text_hits(&lower, option_labels, option_texts)) {
            return ExtractedAnswer::parsed(&label, "option_text".to_string(), span);
        }
        ExtractedAnswer::unparsed()
    }
}

/// Extracts with the built-in marker list.
pub fn extract_answer(
    text: &str,
    option_labels: &[&str],
    option_texts: &[&str],
    order_hint: PromptOrder,
) -> ExtractedAnswer {
    MarkerList::builtin().extract(text, option_labels, option_texts, order_hint)
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

fn char_before(text: &str, at: usize) -> Option<char> {
    text[..at].chars().next_back()
}

/// End of the alphanumeric run starting at `start`.
fn run_end(text: &str, start: usize) -> usize {
    text[start..]
        .char_indices()
        .find(|(_, c)| !is_word(*c))
        .map_or(text.len(), |(i, _)| start + i)
}

/// Matches the run `text[start..end]` against the option labels. Uppercase
/// runs must equal a label; lowercase ones only count when wrapped in
/// `(...)` or `[...]`, which keeps the article "a" from reading as option A.
fn label_for(text: &str, start: usize, end: usize, labels: &[&str]) -> Option<String> {
    let run = &text[start..end];
    if let Some(l) = labels.iter().find(|l| **l == run) {
        return Some(l.to_string());
    }
    let wrapped = matches!(
        (char_before(text, start), text[end..].chars().next()),
        (Some('('), Some(')')) | (Some('['), Some(']'))
    );
    if wrapped {
        let upper = run.to_ascii_uppercase();
        return labels.iter().find(|l| **l == upper).map(|l| l.to_string());
    }
    None
}

fn marker_hits(text: &str, lower: &str, phrase: &str, labels: &[&str]) -> Vec<(String, (usize, usize))> {
    let mut hits = Vec::new();
    let mut from = 0;
    while let Some(rel) = lower[from..].find(phrase) {
        let pos = from + rel;
        from = pos + phrase.len().max(1);
        if char_before(text, pos).is_some_and(is_word) && phrase.starts_with(is_word) {
            continue;
        }
        let end = pos + phrase.len();
        let window_end = text[end..]
            .char_indices()
            .nth(MARKER_WINDOW)
            .map_or(text.len(), |(i, _)| end + i);
        let mut cursor = end;
        while cursor < window_end {
            let Some(c) = text[cursor..].chars().next() else { break };
            if is_word(c) && !char_before(text, cursor).is_some_and(is_word) {
                let stop = run_end(text, cursor);
                if let Some(label) = label_for(text, cursor, stop, labels) {
                    hits.push((label, (cursor, stop)));
                    break;
                }
                cursor = stop;
            } else {
                cursor += c.len_utf8();
            }
        }
    }
    hits
}

const LINE_DECORATION: &[char] = &[' ', '\t', '*', '#', '>', '-', '•', '_', '`'];
const LABEL_DELIMITERS: &[char] = &['.', ')', ']', ':', '*', ',', ';', '_', '`'];

fn line_label_hits(text: &str, labels: &[&str]) -> Vec<(String, (usize, usize))> {
    let mut hits = Vec::new();
    let mut offset = 0;
    for line in text.split('\n') {
        let line_start = offset;
        offset += line.len() + 1;
        let line = line.trim_end_matches('\r');
        let body = line.trim_start_matches(LINE_DECORATION);
        let mut start = line_start + (line.len() - body.len());
        let mut rest = body;
        if let Some(r) = rest.strip_prefix(['(', '[']) {
            start += 1;
            rest = r;
        } else if rest.len() > 7 && rest[..7].eq_ignore_ascii_case("option ") {
            start += 7;
            rest = &rest[7..];
        }
        if !rest.starts_with(is_word) {
            continue;
        }
        let stop = run_end(text, start);
        let Some(label) = label_for(text, start, stop, labels) else { continue };
        let after = &text[stop..line_start + line.len()];
        let delimited = after.trim().is_empty()
            || after.starts_with(LABEL_DELIMITERS)
            || (after.starts_with(char::is_whitespace) && {
                let t = after.trim_start();
                t.starts_with("is ") || t.starts_with(['-', '–', '—'])
            });
        if delimited {
            hits.push((label, (start, stop)));
        }
    }
    hits
}

fn option_text_hits(lower: &str, labels: &[&str], texts: &[&str]) -> Vec<(String, (usize, usize))> {
    let mut hits: Vec<(String, (usize, usize))> = Vec::new();
    for (label, option) in labels.iter().zip(texts) {
        let needle = option.trim().to_ascii_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(rel) = lower[from..].find(&needle) {
            let start = from + rel;
            let end = start + needle.len();
            from = start + needle.chars().next().map_or(1, char::len_utf8);
            let left_ok = !needle.starts_with(is_word) || !char_before(lower, start).is_some_and(is_word);
            let right_ok = !needle.ends_with(is_word) || !lower[end..].starts_with(is_word);
            if left_ok && right_ok {
                hits.push((label.to_string(), (start, end)));
            }
        }
    }
    // Position order; at a shared start the longer (more specific) text wins.
    hits.sort_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)));
    hits.dedup_by(|later, earlier| later.1 .0 == earlier.1 .0);
    hits
}
