//! Word-level tokenization and the token-id vocabulary.
//!
//! Reports are lowercased and split into alphanumeric runs; every other
//! non-whitespace character becomes its own single-character token, so
//! "R/O metastasis" tokenizes as `[r, /, o, metastasis]`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

const SPECIALS: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("`{0}` does not tokenize to exactly one token")]
    NotSingleToken(String),
    #[error("duplicate token `{0}` in vocabulary listing")]
    DuplicateToken(String),
    #[error("vocabulary listing must start with the five special tokens")]
    MissingSpecials,
}

/// Lowercase `text` and split it into word and punctuation tokens.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lower in ch.to_lowercase() {
                word.push(lower);
            }
        } else {
            if !word.is_empty() {
                tokens.push(core::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                let mut tok = String::new();
                for lower in ch.to_lowercase() {
                    tok.push(lower);
                }
                tokens.push(tok);
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Fixed token-id mapping with reserved ids for the five special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
}

impl Vocabulary {
    /// Build from raw corpus texts plus `extra_words` that must each be a
    /// single token (typically answer words and template scaffolding).
    pub fn build<'a, I, E>(texts: I, extra_words: E) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = &'a str>,
        E: IntoIterator<Item = &'a str>,
    {
        let mut seen = BTreeSet::new();
        for text in texts {
            for token in split_tokens(text) {
                seen.insert(token);
            }
        }
        for word in extra_words {
            let toks = split_tokens(word);
            if toks.len() != 1 {
                return Err(VocabError::NotSingleToken(word.to_string()));
            }
            seen.insert(toks.into_iter().next().unwrap());
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(seen);
        Self::from_tokens(tokens)
    }

    /// Rebuild from a saved listing; ids are the listing positions.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, VocabError> {
        if tokens.len() < SPECIALS.len()
            || tokens[..SPECIALS.len()] != SPECIALS.map(|s| s.to_string())
        {
            return Err(VocabError::MissingSpecials);
        }
        let mut ids = BTreeMap::new();
        for (i, token) in tokens.iter().enumerate() {
            if ids.insert(token.clone(), i as u32).is_some() {
                return Err(VocabError::DuplicateToken(token.clone()));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Id for `token`, or `UNK_ID` when out of vocabulary.
    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Id for `word` only if it is in-vocabulary and a single token.
    pub fn known_single_token(&self, word: &str) -> Result<u32, VocabError> {
        let toks = split_tokens(word);
        if toks.len() != 1 {
            return Err(VocabError::NotSingleToken(word.to_string()));
        }
        match self.ids.get(&toks[0]) {
            Some(&id) => Ok(id),
            None => Err(VocabError::NotSingleToken(word.to_string())),
        }
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokenize `text` and map every token to its id (unknowns to `UNK_ID`).
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_tokens(text).iter().map(|t| self.id(t)).collect()
    }
}
