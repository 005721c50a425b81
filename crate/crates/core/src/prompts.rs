//! Prompt rendering for the four query regimes.
//!
//! All variants share one base body (stem, options, a fixed instruction line),
//! so the appended order instruction is the only difference between the raw,
//! answer-first and logic-first prompts. The reflexive prompt embeds the base
//! body together with the full text of both variant responses.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::Question;
use crate::digest::sha256_hex;

pub const BASE_INSTRUCTION_FILE: &str = "base_instruction.txt";
pub const ANSWER_FIRST_FILE: &str = "answer_first.txt";
pub const LOGIC_FIRST_FILE: &str = "logic_first.txt";
pub const REFLEXIVE_FILE: &str = "reflexive.txt";

const BUILTIN_BASE_INSTRUCTION: &str = include_str!("../templates/base_instruction.txt");
const BUILTIN_ANSWER_FIRST: &str = include_str!("../templates/answer_first.txt");
const BUILTIN_LOGIC_FIRST: &str = include_str!("../templates/logic_first.txt");
const BUILTIN_REFLEXIVE: &str = include_str!("../templates/reflexive.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptOrder {
    Raw,
    AnswerFirst,
    LogicFirst,
    Reflexive,
}

impl PromptOrder {
    pub const ALL: [PromptOrder; 4] = [
        PromptOrder::Raw,
        PromptOrder::AnswerFirst,
        PromptOrder::LogicFirst,
        PromptOrder::Reflexive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptOrder::Raw => "raw",
            PromptOrder::AnswerFirst => "answer_first",
            PromptOrder::LogicFirst => "logic_first",
            PromptOrder::Reflexive => "reflexive",
        }
    }

    /// Column heading used in report tables.
    pub fn title(self) -> &'static str {
        match self {
            PromptOrder::Raw => "Raw Prompt",
            PromptOrder::AnswerFirst => "Answer First",
            PromptOrder::LogicFirst => "Logic First",
            PromptOrder::Reflexive => "Reflexive Prompt",
        }
    }
}

impl fmt::Display for PromptOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptOrder::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown prompt order `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub question_id: String,
    pub order: PromptOrder,
    pub text: String,
    pub template_version: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt order `{0}` cannot be rendered as a single-step variant")]
    InvalidOrder(PromptOrder),
    #[error("reflexive prompt needs a nonempty {0} result")]
    EmptyResult(&'static str),
    #[error("cannot read template {path}: {source}")]
    TemplateIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("reflexive template is missing placeholder `{0}`")]
    MissingPlaceholder(&'static str),
}

/// The instruction texts used to build every prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub base_instruction: String,
    pub answer_first_suffix: String,
    pub logic_first_suffix: String,
    /// Uses `{question}`, `{result_1}` and `{result_2}` placeholders.
    pub reflexive: String,
    version: String,
}

/// Strips exactly one trailing line ending left by the fixture files.
fn strip_eol(s: &str) -> &str {
    s.strip_suffix("\r\n")
        .or_else(|| s.strip_suffix('\n'))
        .unwrap_or(s)
}

impl TemplateSet {
    pub fn new(
        base_instruction: &str,
        answer_first_suffix: &str,
        logic_first_suffix: &str,
        reflexive: &str,
    ) -> Result<Self, PromptError> {
        for name in ["{question}", "{result_1}", "{result_2}"] {
            if !reflexive.contains(name) {
                return Err(PromptError::MissingPlaceholder(name));
            }
        }
        let version = format!(
            "tpl-{}",
            &sha256_hex(
                [base_instruction, answer_first_suffix, logic_first_suffix, reflexive].join("\u{0}")
            )[..12]
        );
        Ok(Self {
            base_instruction: base_instruction.to_string(),
            answer_first_suffix: answer_first_suffix.to_string(),
            logic_first_suffix: logic_first_suffix.to_string(),
            reflexive: reflexive.to_string(),
            version,
        })
    }

    /// The checked-in templates compiled into the binary.
    pub fn builtin() -> Self {
        Self::new(
            strip_eol(BUILTIN_BASE_INSTRUCTION),
            strip_eol(BUILTIN_ANSWER_FIRST),
            strip_eol(BUILTIN_LOGIC_FIRST),
            strip_eol(BUILTIN_REFLEXIVE),
        )
        .expect("built-in templates are well formed")
    }

    /// Loads the four template files from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|source| PromptError::TemplateIo {
                path: path.display().to_string(),
                source,
            })
        };
        let base = read(BASE_INSTRUCTION_FILE)?;
        let af = read(ANSWER_FIRST_FILE)?;
        let lf = read(LOGIC_FIRST_FILE)?;
        let refl = read(REFLEXIVE_FILE)?;
        Self::new(strip_eol(&base), strip_eol(&af), strip_eol(&lf), strip_eol(&refl))
    }

    /// Content-derived version tag; any template edit changes it.
    pub fn version(&self) -> &str {
        &self.version
    }

    /// Names of templates that differ from the built-in fixtures.
    pub fn diff_against_builtin(&self) -> Vec<&'static str> {
        let builtin = Self::builtin();
        let mut out = Vec::new();
        if self.base_instruction != builtin.base_instruction {
            out.push(BASE_INSTRUCTION_FILE);
        }
        if self.answer_first_suffix != builtin.answer_first_suffix {
            out.push(ANSWER_FIRST_FILE);
        }
        if self.logic_first_suffix != builtin.logic_first_suffix {
            out.push(LOGIC_FIRST_FILE);
        }
        if self.reflexive != builtin.reflexive {
            out.push(REFLEXIVE_FILE);
        }
        out
    }

    /// Stem, a blank line, one `LABEL. text` line per option, then the base instruction.
    pub fn render_base(&self, q: &Question) -> String {
        let mut text = String::with_capacity(q.stem.len() + 64 * q.options.len());
        text.push_str(&q.stem);
        text.push_str("\n\n");
        for opt in &q.options {
            text.push_str(&opt.label);
            text.push_str(". ");
            text.push_str(&opt.text);
            text.push('\n');
        }
        text.push_str(&self.base_instruction);
        text
    }

    pub fn render_variant(&self, q: &Question, order: PromptOrder) -> Result<RenderedPrompt, PromptError> {
        let base = self.render_base(q);
        let text = match order {
            PromptOrder::Raw => base,
            PromptOrder::AnswerFirst => format!("{base}\n{}", self.answer_first_suffix),
            PromptOrder::LogicFirst => format!("{base}\n{}", self.logic_first_suffix),
            PromptOrder::Reflexive => return Err(PromptError::InvalidOrder(order)),
        };
        Ok(self.tag(q, order, text))
    }

    /// Result 1 is always the answer-first response, Result 2 the logic-first one.
    pub fn render_reflexive(
        &self,
        q: &Question,
        result_answer_first: &str,
        result_logic_first: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        if result_answer_first.is_empty() {
            return Err(PromptError::EmptyResult("answer-first"));
        }
        if result_logic_first.is_empty() {
            return Err(PromptError::EmptyResult("logic-first"));
        }
        let base = self.render_base(q);
        let text = substitute(
            &self.reflexive,
            &[
                ("question", base.as_str()),
                ("result_1", result_answer_first),
                ("result_2", result_logic_first),
            ],
        );
        Ok(self.tag(q, PromptOrder::Reflexive, text))
    }

    fn tag(&self, q: &Question, order: PromptOrder, text: String) -> RenderedPrompt {
        RenderedPrompt {
            question_id: q.id.clone(),
            order,
            text,
            template_version: self.version.clone(),
        }
    }
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Single-pass `{name}` substitution; substituted values are never rescanned.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let name = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| (*v, close))
        });
        match hit {
            Some((value, close)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
