use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::tokenizer::{is_punct, surface_words};
use super::QueryError;

pub const ENTITY: &str = "[ENTITY]";
pub const TOK: &str = "[TOK]";

/// How `[ENTITY]` is rewritten before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionStrategy {
    /// `[TOK]` only.
    TokOnly,
    /// The textual name only (no face).
    NameOnly,
    /// `[TOK] NAME`.
    TokThenName,
    /// `NAME [TOK]`.
    NameThenTok,
    /// `[TOK].` prefix, then the caption with the textual name inline.
    PrefixTokNameInline,
}

impl ExpansionStrategy {
    pub const ALL: [ExpansionStrategy; 5] = [
        ExpansionStrategy::TokOnly,
        ExpansionStrategy::NameOnly,
        ExpansionStrategy::TokThenName,
        ExpansionStrategy::NameThenTok,
        ExpansionStrategy::PrefixTokNameInline,
    ];

    /// Short name used on the command line.
    pub fn cli_name(self) -> &'static str {
        match self {
            Self::TokOnly => "tok",
            Self::NameOnly => "name",
            Self::TokThenName => "tok_name",
            Self::NameThenTok => "name_tok",
            Self::PrefixTokNameInline => "prefix_tok",
        }
    }

    pub fn uses_face(self) -> bool {
        self != Self::NameOnly
    }
}

impl fmt::Display for ExpansionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for ExpansionStrategy {
    type Err = QueryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.cli_name() == s)
            .ok_or_else(|| QueryError::Format(format!("unknown strategy {s:?}")))
    }
}

/// Caption text carrying exactly one `[ENTITY]` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnonymizedCaption {
    text: String,
    template_id: u32,
}

impl AnonymizedCaption {
    pub fn new(text: impl Into<String>, template_id: u32) -> Result<Self, QueryError> {
        let text = text.into();
        let count = text.matches(ENTITY).count();
        if count != 1 {
            return Err(QueryError::Format(format!(
                "expected exactly one {ENTITY} in {text:?}, found {count}"
            )));
        }
        Ok(Self { text, template_id })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn template_id(&self) -> u32 {
        self.template_id
    }
}

/// One position of an expanded caption: a word, or the face-token splice slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Slot {
    Word(String),
    Tok,
}

/// Rewrites `[ENTITY]` according to `strategy`. Pure in
/// `(caption text, strategy, name)`.
pub fn expand_entity(caption: &AnonymizedCaption, strategy: ExpansionStrategy, name: &str) -> Vec<Slot> {
    let name_words = || surface_words(name).into_iter().map(Slot::Word);
    let words = surface_words(caption.text());
    let mut out = Vec::with_capacity(words.len() + 4);
    if strategy == ExpansionStrategy::PrefixTokNameInline {
        out.push(Slot::Tok);
        out.push(Slot::Word(".".into()));
    }
    for w in words {
        if w != ENTITY {
            out.push(Slot::Word(w));
            continue;
        }
        match strategy {
            ExpansionStrategy::TokOnly => out.push(Slot::Tok),
            ExpansionStrategy::NameOnly | ExpansionStrategy::PrefixTokNameInline => out.extend(name_words()),
            ExpansionStrategy::TokThenName => {
                out.push(Slot::Tok);
                out.extend(name_words());
            }
            ExpansionStrategy::NameThenTok => {
                out.extend(name_words());
                out.push(Slot::Tok);
            }
        }
    }
    if strategy == ExpansionStrategy::PrefixTokNameInline
        && !matches!(out.last(), Some(Slot::Word(w)) if is_punct(w))
    {
        out.push(Slot::Word(".".into()));
    }
    out
}

/// Surface string of a slot sequence, `[TOK]` rendered literally.
pub fn detokenize(slots: &[Slot]) -> String {
    let mut out = String::new();
    for slot in slots {
        let w = match slot {
            Slot::Word(w) => w.as_str(),
            Slot::Tok => TOK,
        };
        if !out.is_empty() && !is_punct(w) {
            out.push(' ');
        }
        out.push_str(w);
    }
    out
}
