//! Whitespace-and-punctuation tokenizer with a frequency-built vocabulary.
//!
//! No learned subwords: text is lowercased, split on whitespace, and every
//! punctuation character becomes its own token, so `"I'm tired!"` yields
//! `i ' m tired !`. Ids 0..3 are reserved for PAD, CLS, and UNK.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

pub const PAD_ID: usize = 0;
pub const CLS_ID: usize = 1;
pub const UNK_ID: usize = 2;

pub const PAD_TOKEN: &str = "[PAD]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const UNK_TOKEN: &str = "[UNK]";

/// Lowercase and split into word and single-character punctuation tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.to_lowercase().chars() {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct VocabTokens(Vec<String>);

/// Token table with dense ids. Construction is deterministic: tokens are
/// ranked by descending frequency, ties broken lexicographically.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "VocabTokens", into = "VocabTokens")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<VocabTokens> for Vocabulary {
    fn from(v: VocabTokens) -> Self {
        let index = v.0.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens: v.0, index }
    }
}

impl From<Vocabulary> for VocabTokens {
    fn from(v: Vocabulary) -> Self {
        VocabTokens(v.tokens)
    }
}

impl Vocabulary {
    /// Build from a corpus, keeping at most `max_size` entries including the
    /// three reserved ids.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: usize) -> Self {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for token in split_tokens(text) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![
            PAD_TOKEN.to_string(),
            CLS_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
        ];
        let budget = max_size.saturating_sub(tokens.len());
        tokens.extend(ranked.into_iter().take(budget).map(|(t, _)| t));

        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id for a token, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// SHA-256 over the token list; stable identity for checkpoints.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

/// A tokenized sentence: CLS-prefixed ids padded to a fixed length, with a
/// mask that is true at real (non-pad) positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenIdSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<bool>,
    /// Surface forms for the non-pad positions, CLS included.
    pub surfaces: Vec<String>,
}

impl TokenIdSequence {
    /// Number of non-pad positions, CLS included.
    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Tokenize to exactly `max_len` ids: CLS, then word/punctuation tokens
/// (UNK for out-of-vocabulary), truncated or padded as needed.
pub fn tokenize(vocab: &Vocabulary, text: &str, max_len: usize) -> TokenIdSequence {
    assert!(max_len >= 1, "max_len must allow at least the CLS token");
    let mut ids = vec![CLS_ID];
    let mut surfaces = vec![CLS_TOKEN.to_string()];
    for token in split_tokens(text) {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id(&token));
        surfaces.push(token);
    }
    let real = ids.len();
    ids.resize(max_len, PAD_ID);
    let mut mask = vec![true; real];
    mask.resize(max_len, false);
    TokenIdSequence { ids, mask, surfaces }
}
