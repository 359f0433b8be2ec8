use std::collections::HashMap;

use crate::decoder::{EOS, NUM_SPECIAL, UNK};
use crate::error::{Error, Result};
use crate::metrics::tokenize;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// Token/id map with the four special tokens at ids 0..4; remaining tokens
/// ordered by descending corpus frequency, then lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(w, _)| !SPECIAL_TOKENS.contains(&w.as_str())).collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_words(words.into_iter().map(|(w, _)| w).collect()).expect("unique by construction")
    }

    /// Words after the special tokens, in id order.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::contract(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_SPECIAL..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined words, stopping at end-of-sequence and skipping other
    /// special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i >= NUM_SPECIAL)
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}
