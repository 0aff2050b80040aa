//! Report corpora: validation, chronological splitting, and stratified
//! K-shot sampling that preserves per-category positive rates.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::date::IsoDate;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CorpusError {
    #[error("no categories declared")]
    NoCategories,
    #[error("duplicate category name `{0}`")]
    DuplicateCategory(String),
    #[error("duplicate report id `{0}`")]
    DuplicateId(String),
    #[error("report `{0}`: empty text")]
    EmptyText(String),
    #[error("report `{id}`: label vector has length {got}, expected {expected}")]
    GoldLength {
        id: String,
        got: usize,
        expected: usize,
    },
    #[error("report `{id}`: label not binary (value {value})")]
    GoldNotBinary { id: String, value: u8 },
    #[error("sample size {k} exceeds pool size {pool}")]
    SampleTooLarge { k: usize, pool: usize },
    #[error("sample size must be positive")]
    SampleEmpty,
}

/// One label of the task's label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Category {
    pub name: String,
    /// Abbreviated surface form; equals `name` when none exists.
    pub short_name: String,
}

impl Category {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            short_name: name.to_string(),
        }
    }

    pub fn with_short(name: &str, short_name: &str) -> Self {
        Self {
            name: name.to_string(),
            short_name: short_name.to_string(),
        }
    }
}

/// One dated report with its binary gold labels (one slot per category).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub id: String,
    pub date: IsoDate,
    pub text: String,
    pub gold: Vec<u8>,
}

/// A validated set of reports over a fixed category list.
///
/// Category indices are list positions; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    categories: Vec<Category>,
    reports: Vec<Report>,
}

impl Corpus {
    pub fn new(categories: Vec<Category>, reports: Vec<Report>) -> Result<Self, CorpusError> {
        if categories.is_empty() {
            return Err(CorpusError::NoCategories);
        }
        for (i, c) in categories.iter().enumerate() {
            if categories[..i].iter().any(|p| p.name == c.name) {
                return Err(CorpusError::DuplicateCategory(c.name.clone()));
            }
        }
        for (i, r) in reports.iter().enumerate() {
            if reports[..i].iter().any(|p| p.id == r.id) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
            if r.text.trim().is_empty() {
                return Err(CorpusError::EmptyText(r.id.clone()));
            }
            if r.gold.len() != categories.len() {
                return Err(CorpusError::GoldLength {
                    id: r.id.clone(),
                    got: r.gold.len(),
                    expected: categories.len(),
                });
            }
            if let Some(&value) = r.gold.iter().find(|&&v| v > 1) {
                return Err(CorpusError::GoldNotBinary {
                    id: r.id.clone(),
                    value,
                });
            }
        }
        Ok(Self {
            categories,
            reports,
        })
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn reports(&self) -> &[Report] {
        &self.reports
    }

    pub fn len(&self) -> usize {
        self.reports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reports.is_empty()
    }

    /// Number of positive reports per category.
    pub fn positive_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.categories.len()];
        for r in &self.reports {
            for (i, &g) in r.gold.iter().enumerate() {
                counts[i] += g as usize;
            }
        }
        counts
    }

    /// New corpus holding the reports at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let reports = indices.iter().map(|&i| self.reports[i].clone()).collect();
        Corpus {
            categories: self.categories.clone(),
            reports,
        }
    }
}

/// Split into reports dated at or before `cutoff` and reports after it.
pub fn chronological_split(corpus: &Corpus, cutoff: IsoDate) -> (Corpus, Corpus) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, r) in corpus.reports().iter().enumerate() {
        if r.date <= cutoff {
            train.push(i);
        } else {
            test.push(i);
        }
    }
    (corpus.subset(&train), corpus.subset(&test))
}

/// Per-category positive targets for a K-shot sample: `floor(K * rate)`.
///
/// Rounding down keeps targets within one of the nearest integer while never
/// over-allocating scarce categories when several rates round up at once.
pub fn proportional_targets(positive_counts: &[usize], pool_size: usize, k: usize) -> Vec<usize> {
    positive_counts
        .iter()
        .map(|&c| {
            if pool_size == 0 {
                0
            } else {
                k * c / pool_size
            }
        })
        .collect()
}

/// A K-shot sample with its allocation bookkeeping.
#[derive(Debug, Clone)]
pub struct KshotSample {
    pub corpus: Corpus,
    /// Per-category positive targets the sampler aimed for.
    pub targets: Vec<usize>,
    /// Per-category positives actually drawn.
    pub achieved: Vec<usize>,
    /// True when some category missed its proportional count by more than one.
    pub degraded: bool,
}

/// Draw K reports whose per-category positive counts track the pool's rates.
///
/// Categories are allocated rarest first. Each draw picks uniformly among the
/// eligible reports that push the fewest already-satisfied categories over
/// target, so a rare category's slots are not consumed by frequent co-labels.
/// The remainder is filled the same way from all unselected reports.
/// Deterministic for a fixed `(pool, k, seed)`.
pub fn stratified_kshot(pool: &Corpus, k: usize, seed: u64) -> Result<KshotSample, CorpusError> {
    if k == 0 {
        return Err(CorpusError::SampleEmpty);
    }
    if k > pool.len() {
        return Err(CorpusError::SampleTooLarge { k, pool: pool.len() });
    }
    let n = pool.categories().len();
    let counts = pool.positive_counts();
    let targets = proportional_targets(&counts, pool.len(), k);
    let rounded: Vec<usize> = counts
        .iter()
        .map(|&c| nearest_integer_target(c, pool.len(), k))
        .collect();

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut selected = vec![false; pool.len()];
    let mut selected_count = 0usize;
    let mut achieved = vec![0usize; n];

    // Price of adding one more positive to category j: free while under its
    // floor target, cheap while the count stays within one of the nearest
    // integer, and prohibitive once it would leave that band.
    let overshoot_cost = |report: &Report, achieved: &[usize]| -> usize {
        report
            .gold
            .iter()
            .enumerate()
            .filter(|&(_, &g)| g == 1)
            .map(|(j, _)| {
                if achieved[j] < targets[j] {
                    0
                } else if achieved[j] <= rounded[j] {
                    1
                } else {
                    1000
                }
            })
            .sum()
    };
    let take = |idx: usize,
                    selected: &mut Vec<bool>,
                    selected_count: &mut usize,
                    achieved: &mut Vec<usize>| {
        selected[idx] = true;
        *selected_count += 1;
        for (j, &g) in pool.reports()[idx].gold.iter().enumerate() {
            achieved[j] += g as usize;
        }
    };

    // Rarest categories first: their candidates are scarcest.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (counts[i], i));
    'alloc: for &cat in &order {
        while achieved[cat] < targets[cat] {
            if selected_count == k {
                break 'alloc;
            }
            let mut best_cost = usize::MAX;
            let mut candidates = Vec::new();
            for (idx, r) in pool.reports().iter().enumerate() {
                if selected[idx] || r.gold[cat] != 1 {
                    continue;
                }
                let cost = overshoot_cost(r, &achieved);
                if cost < best_cost {
                    best_cost = cost;
                    candidates.clear();
                }
                if cost == best_cost {
                    candidates.push(idx);
                }
            }
            if candidates.is_empty() {
                break; // no positives left for this category
            }
            let pick = candidates[rng.gen_range(0..candidates.len())];
            take(pick, &mut selected, &mut selected_count, &mut achieved);
        }
    }

    while selected_count < k {
        let mut best_cost = usize::MAX;
        let mut candidates = Vec::new();
        for (idx, r) in pool.reports().iter().enumerate() {
            if selected[idx] {
                continue;
            }
            let cost = overshoot_cost(r, &achieved);
            if cost < best_cost {
                best_cost = cost;
                candidates.clear();
            }
            if cost == best_cost {
                candidates.push(idx);
            }
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        take(pick, &mut selected, &mut selected_count, &mut achieved);
    }

    let picked: Vec<usize> = (0..pool.len()).filter(|&i| selected[i]).collect();
    let degraded = (0..n).any(|i| achieved[i].abs_diff(rounded[i]) > 1);
    Ok(KshotSample {
        corpus: pool.subset(&picked),
        targets,
        achieved,
        degraded,
    })
}

/// `round(k * count / pool)` without going through floats.
fn nearest_integer_target(count: usize, pool: usize, k: usize) -> usize {
    if pool == 0 {
        0
    } else {
        (2 * k * count + pool) / (2 * pool)
    }
}
