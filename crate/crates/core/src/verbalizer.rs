//! Label-to-word mappings and masked max-pooling of category scores.
//!
//! Each category maps to one answer word (single mode) or an ordered list of
//! synonyms (multi mode). The mappings compile against a vocabulary into an
//! n x M token-id matrix with a validity mask; a category's score is the
//! maximum mask-position logit over its valid entries, so rows shorter than M
//! are padded by masking rather than by sentinel logit values.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::corpus::Category;
use crate::vocab::{Vocabulary, PAD_ID};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerbalizerError {
    #[error("category `{0}` has no mapping words")]
    EmptyWords(String),
    #[error("category `{0}` has an empty mapping word")]
    EmptyWord(String),
    #[error("category `{category}` lists `{word}` twice")]
    DuplicateWord { category: String, word: String },
    #[error("unmapped word `{word}` for category `{category}`: not a single in-vocabulary token")]
    UnmappedWord { category: String, word: String },
    #[error("verbalizer category {index} is `{found}`, corpus expects `{expected}`")]
    CategoryMismatch {
        index: usize,
        found: String,
        expected: String,
    },
    #[error("verbalizer lists {found} categories, corpus has {expected}")]
    CategoryCount { found: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerbalizerMode {
    /// One answer word per category: the primary word only.
    Single,
    /// Primary word plus synonyms, in listed order.
    Multi,
}

/// Ordered category-to-answer-word mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verbalizer {
    mode: VerbalizerMode,
    entries: Vec<(String, Vec<String>)>,
}

impl Verbalizer {
    /// Build from per-category word lists (primary word first). Single mode
    /// keeps only each primary word; all words are lowercased.
    pub fn from_word_lists(
        mode: VerbalizerMode,
        lists: Vec<(String, Vec<String>)>,
    ) -> Result<Self, VerbalizerError> {
        let mut entries = Vec::with_capacity(lists.len());
        for (category, words) in lists {
            if words.is_empty() {
                return Err(VerbalizerError::EmptyWords(category));
            }
            let keep = match mode {
                VerbalizerMode::Single => 1,
                VerbalizerMode::Multi => words.len(),
            };
            let mut kept: Vec<String> = Vec::with_capacity(keep);
            for word in words.into_iter().take(keep) {
                let word = word.to_lowercase();
                if word.trim().is_empty() {
                    return Err(VerbalizerError::EmptyWord(category));
                }
                if kept.contains(&word) {
                    return Err(VerbalizerError::DuplicateWord { category, word });
                }
                kept.push(word);
            }
            entries.push((category, kept));
        }
        Ok(Self { mode, entries })
    }

    pub fn mode(&self) -> VerbalizerMode {
        self.mode
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All mapping words in category order (for vocabulary construction).
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .flat_map(|(_, words)| words.iter().map(String::as_str))
    }

    /// Word list for category `index`.
    pub fn category_words(&self, index: usize) -> &[String] {
        &self.entries[index].1
    }

    /// Check the mapping covers exactly the given categories, in order.
    pub fn check_alignment(&self, categories: &[Category]) -> Result<(), VerbalizerError> {
        if self.entries.len() != categories.len() {
            return Err(VerbalizerError::CategoryCount {
                found: self.entries.len(),
                expected: categories.len(),
            });
        }
        for (i, ((name, _), cat)) in self.entries.iter().zip(categories).enumerate() {
            if name != &cat.name {
                return Err(VerbalizerError::CategoryMismatch {
                    index: i,
                    found: name.clone(),
                    expected: cat.name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Token-id matrix of shape n x M with a validity mask; rows are padded with
/// `PAD_ID` beyond their real entries, and the pad entries are never read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingMatrix {
    token_ids: Vec<Vec<u32>>,
    valid: Vec<Vec<bool>>,
    width: usize,
}

impl MappingMatrix {
    pub fn rows(&self) -> usize {
        self.token_ids.len()
    }

    /// M: the longest row's mapping count.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Valid token ids of row `i`, in mapping order.
    pub fn valid_ids(&self, i: usize) -> impl Iterator<Item = u32> + '_ {
        self.token_ids[i]
            .iter()
            .zip(&self.valid[i])
            .filter(|&(_, &v)| v)
            .map(|(&id, _)| id)
    }

    #[cfg(test)]
    fn from_raw(token_ids: Vec<Vec<u32>>, valid: Vec<Vec<bool>>) -> Self {
        let width = token_ids.first().map_or(0, Vec::len);
        Self {
            token_ids,
            valid,
            width,
        }
    }
}

/// Compile the verbalizer's words to token ids against `vocab`.
pub fn build_matrix(
    verbalizer: &Verbalizer,
    vocab: &Vocabulary,
) -> Result<MappingMatrix, VerbalizerError> {
    let width = verbalizer
        .entries()
        .iter()
        .map(|(_, words)| words.len())
        .max()
        .unwrap_or(0);
    let mut token_ids = Vec::with_capacity(verbalizer.len());
    let mut valid = Vec::with_capacity(verbalizer.len());
    for (category, words) in verbalizer.entries() {
        let mut id_row = vec![PAD_ID; width];
        let mut valid_row = vec![false; width];
        for (m, word) in words.iter().enumerate() {
            let id = vocab.known_single_token(word).map_err(|_| {
                VerbalizerError::UnmappedWord {
                    category: category.clone(),
                    word: word.clone(),
                }
            })?;
            id_row[m] = id;
            valid_row[m] = true;
        }
        token_ids.push(id_row);
        valid.push(valid_row);
    }
    Ok(MappingMatrix {
        token_ids,
        valid,
        width,
    })
}

/// z[i] = max over row i's valid entries of `mask_logits[token_id]`.
pub fn category_scores(mask_logits: &[f64], matrix: &MappingMatrix) -> Vec<f64> {
    category_picks(mask_logits, matrix)
        .into_iter()
        .map(|(z, _)| z)
        .collect()
}

/// Category scores together with the token id attaining each maximum
/// (first valid entry wins ties), for routing gradients during training.
pub fn category_picks(mask_logits: &[f64], matrix: &MappingMatrix) -> Vec<(f64, u32)> {
    (0..matrix.rows())
        .map(|i| {
            let mut best: Option<(f64, u32)> = None;
            for id in matrix.valid_ids(i) {
                let logit = mask_logits[id as usize];
                match best {
                    Some((b, _)) if logit <= b => {}
                    _ => best = Some((logit, id)),
                }
            }
            best.expect("verbalizer rows are never empty")
        })
        .collect()
}
