//! Synthetic report generation with construction-time label consistency.
//!
//! A generation spec lists, per category, positive-finding sentence patterns
//! (which may describe the finding only through synonyms or abbreviations)
//! and negated-mention patterns (a cue followed by the category's name).
//! A report's gold vector is decided first — exactly `round(size * rate)`
//! positives per category, placed by seeded shuffles — and sentences are then
//! emitted to match: one positive pattern per positive category, an optional
//! negation pattern per negative category, plus neutral filler sentences.
//!
//! Validation enforces mention isolation: a pattern mentions no category
//! other than its own, fillers mention none, and every negation pattern is
//! suppressed by the default cue set when read on its own. Labels therefore
//! never contradict the emitted text.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::baselines::{label_match, negation_cue_label, MentionLexicon, NegationCueSet};
use crate::corpus::{Category, Corpus, Report};
use crate::date::IsoDate;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("corpus size must be positive")]
    EmptySize,
    #[error("category `{category}`: positive rate {rate} outside (0, 1]")]
    RateOutOfRange { category: String, rate: f64 },
    #[error("negation rate {0} outside [0, 1]")]
    NegationRateOutOfRange(f64),
    #[error("category `{0}` has no positive sentence patterns")]
    MissingPositivePattern(String),
    #[error("category `{0}` has no negation sentence patterns")]
    MissingNegationPattern(String),
    #[error("category `{category}`: negation pattern `{pattern}` never mentions the category")]
    PatternMissingMention { category: String, pattern: String },
    #[error("category `{category}`: negation pattern `{pattern}` is not suppressed by the default cues")]
    PatternNotNegated { category: String, pattern: String },
    #[error("category `{category}`: pattern `{pattern}` mentions other category `{other}`")]
    CrossMention {
        category: String,
        pattern: String,
        other: String,
    },
    #[error("filler `{filler}` mentions category `{category}`")]
    FillerMentionsCategory { filler: String, category: String },
    #[error("at least one filler sentence is required")]
    NoFillers,
    #[error("date range start {start} is after end {end}")]
    DateOrder { start: IsoDate, end: IsoDate },
}

/// Sentence material for one category.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryPatterns {
    pub category: Category,
    /// Emitted when the category is positive; `{mention}` expands to the
    /// lowercased category name. May avoid the name entirely (synonyms).
    pub positive: Vec<String>,
    /// Emitted (sometimes) when the category is negative; must mention the
    /// category under a negation cue.
    pub negation: Vec<String>,
    /// Fraction of reports positive for this category, in (0, 1].
    pub positive_rate: f64,
}

/// Complete recipe for one synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub categories: Vec<CategoryPatterns>,
    /// Neutral sentences; must not mention any category.
    pub fillers: Vec<String>,
    pub size: usize,
    /// Chance of emitting a negation sentence for each negative category.
    pub negation_rate: f64,
    pub date_start: IsoDate,
    pub date_end: IsoDate,
    pub id_prefix: String,
}

fn expand_mention(pattern: &str, category: &Category) -> String {
    pattern.replace("{mention}", &category.name.to_lowercase())
}

/// Append a sentence terminator when the pattern lacks one, so consecutive
/// sentences never merge into one negation scope.
fn terminated(sentence: &str) -> String {
    let trimmed = sentence.trim_end();
    match trimmed.chars().last() {
        Some('.') | Some(';') => trimmed.to_string(),
        _ => {
            let mut s = trimmed.to_string();
            s.push('.');
            s
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.size == 0 {
            return Err(SynthError::EmptySize);
        }
        if !(0.0..=1.0).contains(&self.negation_rate) {
            return Err(SynthError::NegationRateOutOfRange(self.negation_rate));
        }
        if self.date_start > self.date_end {
            return Err(SynthError::DateOrder {
                start: self.date_start,
                end: self.date_end,
            });
        }
        if self.fillers.is_empty() {
            return Err(SynthError::NoFillers);
        }
        let categories: Vec<Category> =
            self.categories.iter().map(|c| c.category.clone()).collect();
        let lexicon = MentionLexicon::from_category_names(&categories);
        let cues = NegationCueSet::default();
        for (i, spec) in self.categories.iter().enumerate() {
            let name = spec.category.name.clone();
            if !(spec.positive_rate > 0.0 && spec.positive_rate <= 1.0) {
                return Err(SynthError::RateOutOfRange {
                    category: name,
                    rate: spec.positive_rate,
                });
            }
            if spec.positive.is_empty() {
                return Err(SynthError::MissingPositivePattern(name));
            }
            if spec.negation.is_empty() {
                return Err(SynthError::MissingNegationPattern(name));
            }
            for pattern in spec.positive.iter().chain(&spec.negation) {
                let sentence = terminated(&expand_mention(pattern, &spec.category));
                let hits = label_match(&sentence, &lexicon);
                for (j, &hit) in hits.iter().enumerate() {
                    if hit == 1 && j != i {
                        return Err(SynthError::CrossMention {
                            category: name.clone(),
                            pattern: pattern.clone(),
                            other: categories[j].name.clone(),
                        });
                    }
                }
            }
            for pattern in &spec.negation {
                let sentence = terminated(&expand_mention(pattern, &spec.category));
                if label_match(&sentence, &lexicon)[i] == 0 {
                    return Err(SynthError::PatternMissingMention {
                        category: name.clone(),
                        pattern: pattern.clone(),
                    });
                }
                if negation_cue_label(&sentence, &lexicon, &cues)[i] == 1 {
                    return Err(SynthError::PatternNotNegated {
                        category: name.clone(),
                        pattern: pattern.clone(),
                    });
                }
            }
        }
        for filler in &self.fillers {
            if filler.contains("{mention}") {
                return Err(SynthError::FillerMentionsCategory {
                    filler: filler.clone(),
                    category: "{mention}".to_string(),
                });
            }
            let hits = label_match(&terminated(filler), &lexicon);
            if let Some(j) = hits.iter().position(|&h| h == 1) {
                return Err(SynthError::FillerMentionsCategory {
                    filler: filler.clone(),
                    category: categories[j].name.clone(),
                });
            }
        }
        Ok(())
    }
}

/// Generate a corpus from `spec`, deterministically per seed.
///
/// Each category receives exactly `round(size * rate)` positive reports, so
/// empirical rates match the spec as closely as integer counts allow.
pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = spec.categories.len();
    let size = spec.size;

    let mut gold = vec![vec![0u8; n]; size];
    for (i, cat) in spec.categories.iter().enumerate() {
        let positives = libm::round(size as f64 * cat.positive_rate) as usize;
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut rng);
        for &idx in order.iter().take(positives.min(size)) {
            gold[idx][i] = 1;
        }
    }

    let start_day = spec.date_start.day_number();
    let end_day = spec.date_end.day_number();
    let width = if size >= 10_000 { 6 } else { 5 };

    let mut reports = Vec::with_capacity(size);
    for (r, gold_row) in gold.into_iter().enumerate() {
        let mut sentences: Vec<String> = Vec::new();
        for (i, cat) in spec.categories.iter().enumerate() {
            if gold_row[i] == 1 {
                // A finding is usually described by two of its sentence
                // patterns, the way real impressions restate key findings.
                let mut order: Vec<usize> = (0..cat.positive.len()).collect();
                order.shuffle(&mut rng);
                let mentions = if rng.gen::<f64>() < 0.75 {
                    2usize.min(cat.positive.len())
                } else {
                    1
                };
                for &p in order.iter().take(mentions) {
                    let pattern = cat.positive[p].clone();
                    sentences.push(terminated(&expand_mention(&pattern, &cat.category)));
                }
            } else if rng.gen::<f64>() < spec.negation_rate {
                let pattern = cat.negation[rng.gen_range(0..cat.negation.len())].clone();
                sentences.push(terminated(&expand_mention(&pattern, &cat.category)));
            }
        }
        let filler_count = rng.gen_range(1..=2usize);
        for _ in 0..filler_count {
            let filler = &spec.fillers[rng.gen_range(0..spec.fillers.len())];
            sentences.push(terminated(filler));
        }
        sentences.shuffle(&mut rng);

        let day = rng.gen_range(start_day..=end_day);
        reports.push(Report {
            id: alloc::format!("{}-{:0width$}", spec.id_prefix, r, width = width),
            date: IsoDate::from_day_number(day),
            text: sentences.join(" "),
            gold: gold_row,
        });
    }

    let categories = spec.categories.iter().map(|c| c.category.clone()).collect();
    Ok(Corpus::new(categories, reports).expect("generated reports satisfy corpus invariants"))
}
