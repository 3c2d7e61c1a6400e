//! Fragmented descriptions and prompt templates.
//!
//! A fragmented description is the ⟨subject, modifiers, supplement⟩ triple
//! the mutation actions edit. A prompt template is the normalized, sellable
//! artifact: a body with exactly one `[SUBJECT]` placeholder that renders to
//! a complete prompt when a subject is substituted.
//!
//! Mutation backends exchange descriptions as a fenced text block so the
//! same parser handles live LLM replies and simulator replies:
//!
//! ```text
//! ```fragment
//! subject: red fox
//! modifiers: watercolor; soft pastel palette
//! supplement: velvety texture; warm glow
//! ```
//! ```

use crate::error::Error;
use crate::Result;
use serde::{Deserialize, Serialize};

/// The placeholder token a template body must contain exactly once.
pub const SUBJECT_PLACEHOLDER: &str = "[SUBJECT]";

/// ⟨subject, modifiers, supplement⟩ — the unit the editing actions operate on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FragmentedDescription {
    pub subject: String,
    pub modifiers: Vec<String>,
    pub supplement: Vec<String>,
}

impl FragmentedDescription {
    pub fn new(
        subject: impl Into<String>,
        modifiers: Vec<String>,
        supplement: Vec<String>,
    ) -> Self {
        FragmentedDescription {
            subject: subject.into(),
            modifiers,
            supplement,
        }
    }

    /// Serializes into the fenced block format shown in the module docs.
    pub fn to_block(&self) -> String {
        format!(
            "```fragment\nsubject: {}\nmodifiers: {}\nsupplement: {}\n```",
            self.subject,
            self.modifiers.join("; "),
            self.supplement.join("; ")
        )
    }
}

/// Parses the first fenced `fragment` block out of a backend reply.
///
/// All three fields must be present; the subject must be non-empty. List
/// fields may be empty (an intersection action can legitimately produce an
/// empty set).
pub fn parse_fragment_block(raw: &str) -> Result<FragmentedDescription> {
    let err = |message: &str| Error::DescriptionParse {
        message: message.to_string(),
        raw: raw.to_string(),
    };

    let start = raw
        .find("```fragment")
        .ok_or_else(|| err("no ```fragment fence"))?;
    let body_start = start + "```fragment".len();
    let rest = &raw[body_start..];
    let end = rest.find("```").ok_or_else(|| err("unterminated fence"))?;
    let body = &rest[..end];

    let mut subject: Option<String> = None;
    let mut modifiers: Option<Vec<String>> = None;
    let mut supplement: Option<Vec<String>> = None;
    for line in body.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| err("line without `key: value`"))?;
        match key.trim().to_ascii_lowercase().as_str() {
            "subject" => subject = Some(value.trim().to_string()),
            "modifiers" => modifiers = Some(split_phrases(value)),
            "supplement" => supplement = Some(split_phrases(value)),
            other => return Err(err(&format!("unknown field {other:?}"))),
        }
    }
    let subject = subject.ok_or_else(|| err("missing subject"))?;
    if subject.is_empty() {
        return Err(err("empty subject"));
    }
    Ok(FragmentedDescription {
        subject,
        modifiers: modifiers.ok_or_else(|| err("missing modifiers"))?,
        supplement: supplement.ok_or_else(|| err("missing supplement"))?,
    })
}

/// Splits a `; `-separated phrase list, dropping empties.
fn split_phrases(value: &str) -> Vec<String> {
    value
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// A normalized template: a body with exactly one subject placeholder, plus
/// the modifier/supplement lists it was normalized from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    body: String,
    pub modifiers: Vec<String>,
    pub supplement: Vec<String>,
}

impl PromptTemplate {
    /// Validates the placeholder-exactly-once contract.
    pub fn new(
        body: impl Into<String>,
        modifiers: Vec<String>,
        supplement: Vec<String>,
    ) -> Result<Self> {
        let body = body.into();
        match count_occurrences(&body, SUBJECT_PLACEHOLDER) {
            1 => Ok(PromptTemplate {
                body,
                modifiers,
                supplement,
            }),
            n => Err(Error::Normalization {
                message: format!("body must contain {SUBJECT_PLACEHOLDER} exactly once, found {n}"),
                raw: body,
            }),
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes the subject, yielding a placeholder-free prompt.
    pub fn render(&self, subject: &str) -> String {
        self.body.replacen(SUBJECT_PLACEHOLDER, subject, 1)
    }
}

fn count_occurrences(haystack: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut rest = haystack;
    while let Some(pos) = rest.find(needle) {
        count += 1;
        rest = &rest[pos + needle.len()..];
    }
    count
}
