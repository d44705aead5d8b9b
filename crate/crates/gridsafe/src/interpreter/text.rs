//! Tokenization and the token vocabulary for constraint text.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Lowercases, splits on whitespace and punctuation, and normalizes number
/// words ("five" -> "5") so spelled-out and digit phrasings share tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| normalize_number_word(t).to_string())
        .collect()
}

fn normalize_number_word(token: &str) -> &str {
    match token {
        "zero" => "0",
        "one" => "1",
        "two" => "2",
        "three" => "3",
        "four" => "4",
        "five" => "5",
        "six" => "6",
        "seven" => "7",
        "eight" => "8",
        "nine" => "9",
        other => other,
    }
}

/// Token-to-index map with a reserved unknown index 0. Indices are dense and
/// assigned in sorted token order, so a vocabulary built from the same corpus
/// is always identical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct TokenVocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

/// Reserved index for tokens outside the vocabulary.
pub const UNK: usize = 0;

impl TokenVocab {
    /// Builds a vocabulary from the tokens of every text in the corpus.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> TokenVocab {
        let mut set = BTreeSet::new();
        for text in texts {
            set.extend(tokenize(text));
        }
        let mut tokens = vec!["<unk>".to_string()];
        tokens.extend(set);
        TokenVocab::from(tokens)
    }

    /// Number of entries including the unknown slot.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    /// Index for a (already-normalized) token; `UNK` if absent.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Tokenizes `text` and maps every token to its index.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }
}

impl From<Vec<String>> for TokenVocab {
    fn from(tokens: Vec<String>) -> TokenVocab {
        let index = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        TokenVocab { tokens, index }
    }
}

impl From<TokenVocab> for Vec<String> {
    fn from(vocab: TokenVocab) -> Vec<String> {
        vocab.tokens
    }
}
