//! Contextual-triple records, tokenization and role canonicalization.
//!
//! Input records arrive as JSON lines. Each record names a head entity, a
//! role, a tail entity and the one to three context sentences the triple
//! was extracted from. Roles are folded to a singular canonical form so
//! that e.g. `affiliates` and `affiliate` share one classifier.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel that replaces purely numeric tokens.
pub const NUM_TOKEN: &str = "<num>";

/// Maximum number of context sentences per record.
pub const MAX_SENTENCES: usize = 3;

/// Graded relevance judgement attached to a labeled triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelevanceLabel {
    HighlyRelevant,
    Relevant,
    Neutral,
    Irrelevant,
}

impl RelevanceLabel {
    pub const ALL: [RelevanceLabel; 4] = [
        RelevanceLabel::HighlyRelevant,
        RelevanceLabel::Relevant,
        RelevanceLabel::Neutral,
        RelevanceLabel::Irrelevant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelevanceLabel::HighlyRelevant => "HIGHLY_RELEVANT",
            RelevanceLabel::Relevant => "RELEVANT",
            RelevanceLabel::Neutral => "NEUTRAL",
            RelevanceLabel::Irrelevant => "IRRELEVANT",
        }
    }
}

impl fmt::Display for RelevanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelevanceLabel {
    type Err = Error;

    /// Case-insensitive; spaces and hyphens are accepted in place of
    /// underscores (`"highly relevant"`, `"Highly-Relevant"`).
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .map(|c| match c {
                ' ' | '-' => '_',
                c => c.to_ascii_uppercase(),
            })
            .collect();
        RelevanceLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == norm)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for RelevanceLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RelevanceLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A canonical (lowercase, singular) role name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Role(String);

impl Role {
    pub fn new(raw: &str) -> Result<Role> {
        canonicalize_role(raw)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Role {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        canonicalize_role(&s).map_err(serde::de::Error::custom)
    }
}

/// Fold a raw role name to its canonical singular form.
///
/// Lowercases and collapses whitespace, then rewrites a trailing `ies` to
/// `y`, or drops a single trailing `s` (but not `ss`). A rewrite that would
/// leave the last word empty is not applied, which keeps the rule
/// idempotent.
pub fn canonicalize_role(raw: &str) -> Result<Role> {
    let lower = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    if lower.is_empty() {
        return Err(Error::EmptyRole);
    }
    let last_word = lower.rsplit(' ').next().unwrap_or(&lower);
    let canonical = if let Some(stem) = lower.strip_suffix("ies") {
        format!("{stem}y")
    } else if last_word.len() > 1 && last_word.ends_with('s') && !last_word.ends_with("ss") {
        lower[..lower.len() - 1].to_string()
    } else {
        lower
    };
    Ok(Role(canonical))
}

/// A (head, role, tail) assertion together with its context sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextualTriple {
    pub id: String,
    pub head: String,
    pub role: Role,
    pub tail: String,
    pub sentences: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<RelevanceLabel>,
}

fn is_internal_punct(c: char) -> bool {
    matches!(c, '.' | '-' | '&' | '\'')
}

/// Split a raw sentence into lowercase tokens.
///
/// Whitespace and any punctuation other than `.`, `-`, `&` and `'` act as
/// separators; those four survive only inside a token. Purely numeric
/// tokens become [`NUM_TOKEN`].
pub fn tokenize(sentence: &str) -> Vec<String> {
    let lower = sentence.to_lowercase();
    // A few characters are uppercase without a lowercase mapping; they split.
    let is_word_char = |c: char| (c.is_alphanumeric() || is_internal_punct(c)) && !c.is_uppercase();
    let mut tokens = Vec::new();
    for piece in lower.split(|c: char| !is_word_char(c)) {
        let trimmed = piece.trim_matches(|c: char| !c.is_alphanumeric());
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.chars().all(|c| c.is_ascii_digit()) {
            tokens.push(NUM_TOKEN.to_string());
        } else {
            tokens.push(trimmed.to_string());
        }
    }
    tokens
}

#[derive(Deserialize)]
struct RawTriple {
    id: String,
    head: String,
    role: String,
    tail: String,
    sentences: Vec<String>,
    #[serde(default)]
    label: Option<String>,
}

fn parse_line(line: &str, lineno: usize) -> Result<ContextualTriple> {
    let parse_err = |message: String| Error::Parse {
        line: lineno,
        message,
    };
    let raw: RawTriple = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
    if raw.id.trim().is_empty() {
        return Err(parse_err("empty id".into()));
    }
    if raw.sentences.is_empty() || raw.sentences.len() > MAX_SENTENCES {
        return Err(parse_err(format!(
            "expected 1 to {MAX_SENTENCES} sentences, found {}",
            raw.sentences.len()
        )));
    }
    if let Some(i) = raw.sentences.iter().position(|s| s.trim().is_empty()) {
        return Err(parse_err(format!("sentence {i} is empty")));
    }
    let role = canonicalize_role(&raw.role).map_err(|e| parse_err(e.to_string()))?;
    let label = raw
        .label
        .map(|l| l.parse::<RelevanceLabel>())
        .transpose()
        .map_err(|e| parse_err(e.to_string()))?;
    Ok(ContextualTriple {
        id: raw.id,
        head: raw.head,
        role,
        tail: raw.tail,
        sentences: raw.sentences,
        label,
    })
}

/// Parse a JSON-lines stream of triple records. Blank lines are skipped.
pub fn parse_triples<R: BufRead>(reader: R) -> Result<Vec<ContextualTriple>> {
    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let triple = parse_line(&line, lineno)?;
        if !seen.insert(triple.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: triple.id,
            });
        }
        triples.push(triple);
    }
    Ok(triples)
}

pub fn parse_triples_str(input: &str) -> Result<Vec<ContextualTriple>> {
    parse_triples(input.as_bytes())
}

/// Write triples in the same JSON-lines format [`parse_triples`] reads.
pub fn write_triples<W: Write>(mut writer: W, triples: &[ContextualTriple]) -> Result<()> {
    for t in triples {
        serde_json::to_writer(&mut writer, t)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// One token list per context sentence, over all triples in input order.
/// Sentences that tokenize to nothing are dropped.
pub fn build_corpus(triples: &[ContextualTriple]) -> Vec<Vec<String>> {
    triples
        .iter()
        .flat_map(|t| t.sentences.iter())
        .map(|s| tokenize(s))
        .filter(|toks| !toks.is_empty())
        .collect()
}
