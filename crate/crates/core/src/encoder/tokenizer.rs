//! Word-level tokenizer with a vocabulary built from the training corpus.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "[UNK]";
pub const DEFAULT_MAX_QUERY_TOKENS: usize = 32;
pub const DEFAULT_MAX_DOC_TOKENS: usize = 180;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    vocab: Vec<String>,
    lookup: HashMap<String, u32>,
    pub unk_id: u32,
    pub max_query_tokens: usize,
    pub max_doc_tokens: usize,
}

/// Splits on anything that is not alphanumeric.
pub fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
}

impl TokenizerConfig {
    /// Creates a config from an explicit vocabulary. Id 0 is reserved for the
    /// unknown token and is inserted if `vocab` does not start with it.
    pub fn new(vocab: Vec<String>, lowercase: bool) -> Result<Self> {
        let mut words = Vec::with_capacity(vocab.len() + 1);
        if vocab.first().map(String::as_str) != Some(UNK_TOKEN) {
            words.push(UNK_TOKEN.to_string());
        }
        words.extend(vocab);
        let mut lookup = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if lookup.insert(w.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self {
            lowercase,
            vocab: words,
            lookup,
            unk_id: 0,
            max_query_tokens: DEFAULT_MAX_QUERY_TOKENS,
            max_doc_tokens: DEFAULT_MAX_DOC_TOKENS,
        })
    }

    /// Keeps the `max_words` most frequent words of `texts` (ties broken
    /// alphabetically), plus the unknown token.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_words: usize,
        lowercase: bool,
    ) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for w in split_words(text) {
                let w = if lowercase {
                    w.to_lowercase()
                } else {
                    w.to_string()
                };
                *counts.entry(w).or_default() += 1;
            }
        }
        counts.remove(UNK_TOKEN);
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_words);
        Self::new(ranked.into_iter().map(|(w, _)| w).collect(), lowercase)
    }

    pub fn with_limits(mut self, max_query_tokens: usize, max_doc_tokens: usize) -> Result<Self> {
        if max_query_tokens == 0 || max_doc_tokens == 0 {
            return Err(Error::invalid("maximum token lengths must be positive"));
        }
        self.max_query_tokens = max_query_tokens;
        self.max_doc_tokens = max_doc_tokens;
        Ok(self)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.lookup.get(word).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Normalized surface words, before vocabulary lookup and truncation.
    pub fn words(&self, text: &str, is_query: bool) -> Vec<String> {
        let limit = self.limit(is_query);
        split_words(text)
            .take(limit)
            .map(|w| {
                if self.lowercase {
                    w.to_lowercase()
                } else {
                    w.to_string()
                }
            })
            .collect()
    }

    fn limit(&self, is_query: bool) -> usize {
        if is_query {
            self.max_query_tokens
        } else {
            self.max_doc_tokens
        }
    }

    pub fn tokenize(&self, text: &str, is_query: bool) -> Result<Vec<u32>> {
        let ids: Vec<u32> = self
            .words(text, is_query)
            .iter()
            .map(|w| self.id(w).unwrap_or(self.unk_id))
            .collect();
        if ids.is_empty() {
            return Err(Error::EmptyInput(format!(
                "no tokens in {:?}",
                truncate_for_message(text)
            )));
        }
        Ok(ids)
    }
}

fn truncate_for_message(text: &str) -> &str {
    match text.char_indices().nth(40) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}
