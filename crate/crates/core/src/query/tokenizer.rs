use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datagen::grammar;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

const PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

pub fn is_punct(word: &str) -> bool {
    word.len() == 1 && word.starts_with(PUNCT)
}

/// Splits on whitespace and peels trailing punctuation into separate words.
/// Case is preserved.
pub fn surface_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let core = chunk.trim_end_matches(PUNCT);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(chunk[core.len()..].chars().map(String::from));
    }
    out
}

/// Fixed word vocabulary. Ids 0..3 are `<unk>`, `<bos>`, `<eos>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Self {
        let unique: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.to_lowercase())
            .filter(|w| ![UNK, BOS, EOS].contains(&w.as_str()))
            .collect();
        let words: Vec<String> = [UNK, BOS, EOS]
            .iter()
            .map(|s| s.to_string())
            .chain(unique)
            .collect();
        Self::with_index(words)
    }

    fn with_index(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    /// Vocabulary of the built-in caption grammar, templates and prompts.
    pub fn builtin() -> Self {
        let mut words = Vec::new();
        for phrase in grammar::all_phrases() {
            let cleaned = phrase
                .replace("[ENTITY]", " ")
                .replace("[CAPTION:", " ")
                .replace("[CAPTION]", " ")
                .replace(']', " ");
            words.extend(surface_words(&cleaned));
        }
        Self::from_words(words)
    }

    /// Restores the lookup index after deserialization.
    pub fn reindexed(self) -> Self {
        Self::with_index(self.words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Lowercased lookup; out-of-vocabulary words map to `<unk>`.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(0)
    }

    pub fn bos(&self) -> usize {
        1
    }

    pub fn eos(&self) -> usize {
        2
    }
}
