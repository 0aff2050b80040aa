//! Evaluation: F1 metrics, seeded multi-run aggregation, negation-case
//! scoring, and training-size sweeps.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::baselines::{find_mentions, MentionLexicon};
use crate::corpus::{Category, Corpus, Report};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("prediction and gold shapes differ at row {row}: {pred} vs {gold}")]
    ShapeMismatch {
        row: usize,
        pred: usize,
        gold: usize,
    },
    #[error("{pred} prediction rows against {gold} gold rows")]
    RowCount { pred: usize, gold: usize },
    #[error("no seeds supplied")]
    NoSeeds,
    #[error("every seeded run failed; first failure: {0}")]
    AllRunsFailed(String),
    #[error("negation case references unknown report `{0}`")]
    UnknownReport(String),
    #[error("labeler failed on report `{id}`: {message}")]
    LabelerFailed { id: String, message: String },
}

/// Per-category prediction tallies over a fixed evaluation set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// F1 in percent from one category's counts; 0 when the denominator is 0.
fn f1_percent(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        100.0 * (2 * c.tp) as f64 / denom as f64
    }
}

/// Per-category, macro-, and micro-averaged F1 (all in percent).
#[derive(Debug, Clone, PartialEq)]
pub struct F1Report {
    pub per_category: Vec<f64>,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub counts: Vec<ConfusionCounts>,
}

pub fn f1_scores(preds: &[Vec<u8>], golds: &[Vec<u8>]) -> Result<F1Report, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::RowCount {
            pred: preds.len(),
            gold: golds.len(),
        });
    }
    let width = golds.first().map_or(0, Vec::len);
    let mut counts = alloc::vec![ConfusionCounts::default(); width];
    for (row, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.len() != g.len() || g.len() != width {
            return Err(EvalError::ShapeMismatch {
                row,
                pred: p.len(),
                gold: g.len(),
            });
        }
        for (i, (&pi, &gi)) in p.iter().zip(g).enumerate() {
            match (pi, gi) {
                (1, 1) => counts[i].tp += 1,
                (1, 0) => counts[i].fp += 1,
                (0, 1) => counts[i].fn_ += 1,
                _ => counts[i].tn += 1,
            }
        }
    }
    let per_category: Vec<f64> = counts.iter().map(f1_percent).collect();
    let macro_f1 = if per_category.is_empty() {
        0.0
    } else {
        per_category.iter().sum::<f64>() / per_category.len() as f64
    };
    let pooled = counts.iter().fold(ConfusionCounts::default(), |acc, c| {
        ConfusionCounts {
            tp: acc.tp + c.tp,
            fp: acc.fp + c.fp,
            fn_: acc.fn_ + c.fn_,
            tn: acc.tn + c.tn,
        }
    });
    Ok(F1Report {
        per_category,
        macro_f1,
        micro_f1: f1_percent(&pooled),
        counts,
    })
}

/// Mean, sample standard deviation (n-1), and the raw per-seed values.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    pub std_dev: f64,
    pub values: Vec<f64>,
}

fn stats_of(values: Vec<f64>) -> MetricStats {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std_dev = if values.len() <= 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        libm::sqrt(ss / (n - 1.0))
    };
    MetricStats {
        mean,
        std_dev,
        values,
    }
}

/// Aggregated metrics over several seeded runs; failed seeds are recorded
/// and excluded from the statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiRunSummary {
    pub metrics: BTreeMap<String, MetricStats>,
    pub failures: Vec<(u64, String)>,
}

pub fn multi_run<F, E>(seeds: &[u64], mut runner: F) -> Result<MultiRunSummary, EvalError>
where
    F: FnMut(u64) -> Result<BTreeMap<String, f64>, E>,
    E: core::fmt::Display,
{
    if seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        match runner(seed) {
            Ok(metrics) => {
                for (key, value) in metrics {
                    collected.entry(key).or_default().push(value);
                }
            }
            Err(e) => failures.push((seed, format!("{e}"))),
        }
    }
    if failures.len() == seeds.len() {
        return Err(EvalError::AllRunsFailed(failures[0].1.clone()));
    }
    let metrics = collected
        .into_iter()
        .map(|(key, values)| (key, stats_of(values)))
        .collect();
    Ok(MultiRunSummary { metrics, failures })
}

/// How many seeded repetitions each training size gets: 10 for the smallest
/// protocol size (8 by default), 5 otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPolicy {
    pub default_runs: usize,
    pub small_k_runs: usize,
    pub small_k: usize,
}

impl Default for SeedPolicy {
    fn default() -> Self {
        Self {
            default_runs: 5,
            small_k_runs: 10,
            small_k: 8,
        }
    }
}

impl SeedPolicy {
    pub fn runs_for(&self, k: SweepSize) -> usize {
        match k {
            SweepSize::Shots(k) if k == self.small_k => self.small_k_runs,
            _ => self.default_runs,
        }
    }
}

pub fn seed_list(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| base + i).collect()
}

/// One x-axis point of a training-size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepSize {
    Shots(usize),
    /// The whole training pool.
    Full,
}

impl core::fmt::Display for SweepSize {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SweepSize::Shots(k) => write!(f, "{k}"),
            SweepSize::Full => write!(f, "full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub size: SweepSize,
    pub summary: MultiRunSummary,
}

/// Run `runner` at every training size with the policy's number of seeds.
pub fn size_sweep<F, E>(
    sizes: &[SweepSize],
    base_seed: u64,
    policy: SeedPolicy,
    mut runner: F,
) -> Result<Vec<SweepEntry>, EvalError>
where
    F: FnMut(SweepSize, u64) -> Result<BTreeMap<String, f64>, E>,
    E: core::fmt::Display,
{
    let mut entries = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let seeds = seed_list(base_seed, policy.runs_for(size));
        let summary = multi_run(&seeds, |seed| runner(size, seed))?;
        entries.push(SweepEntry { size, summary });
    }
    Ok(entries)
}

/// A report that names a category it is annotated negative for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationCase {
    pub report_id: String,
    pub category_index: usize,
    /// The surface form that fired, and where.
    pub form: String,
    pub offset: usize,
}

/// Indices of the categories conventionally left out of negation scoring
/// (those whose mentions are rarely negated in practice).
pub fn default_negation_exclusions(categories: &[Category]) -> BTreeSet<usize> {
    const EXCLUDED: [&str; 4] = ["Cyst", "Post-Treatment", "Steatosis", "Hemangioma"];
    categories
        .iter()
        .enumerate()
        .filter(|(_, c)| EXCLUDED.contains(&c.name.as_str()))
        .map(|(i, _)| i)
        .collect()
}

/// All (report, category) pairs where a surface form fires but gold is 0,
/// excluding `excluded` category indices.
pub fn extract_negation_cases(
    test: &Corpus,
    lexicon: &MentionLexicon,
    excluded: &BTreeSet<usize>,
) -> Vec<NegationCase> {
    let mut cases = Vec::new();
    for report in test.reports() {
        for (i, &gold) in report.gold.iter().enumerate() {
            if gold == 1 || excluded.contains(&i) {
                continue;
            }
            if let Some(mention) = find_mentions(&report.text, lexicon.category_forms(i)).first() {
                cases.push(NegationCase {
                    report_id: report.id.clone(),
                    category_index: i,
                    form: mention.form.clone(),
                    offset: mention.offset,
                });
            }
        }
    }
    cases
}

/// Per-category tallies of negation cases answered correctly (predicted 0).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationSummary {
    /// `(cases, correct)` per category index.
    pub per_category: Vec<(usize, usize)>,
}

impl NegationSummary {
    pub fn accuracy(&self, category: usize) -> Option<f64> {
        let (cases, correct) = self.per_category[category];
        (cases > 0).then(|| correct as f64 / cases as f64)
    }

    pub fn overall(&self) -> Option<f64> {
        let cases: usize = self.per_category.iter().map(|&(c, _)| c).sum();
        let correct: usize = self.per_category.iter().map(|&(_, c)| c).sum();
        (cases > 0).then(|| correct as f64 / cases as f64)
    }
}

/// Fraction of negation cases where `labeler` predicts 0 for the case's
/// category. The labeler runs once per distinct report.
pub fn negation_accuracy<F, E>(
    mut labeler: F,
    cases: &[NegationCase],
    corpus: &Corpus,
) -> Result<NegationSummary, EvalError>
where
    F: FnMut(&Report) -> Result<Vec<u8>, E>,
    E: core::fmt::Display,
{
    let by_id: BTreeMap<&str, &Report> = corpus
        .reports()
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    let mut cache: BTreeMap<&str, Vec<u8>> = BTreeMap::new();
    let mut per_category = alloc::vec![(0usize, 0usize); corpus.categories().len()];
    for case in cases {
        let report = by_id
            .get(case.report_id.as_str())
            .ok_or_else(|| EvalError::UnknownReport(case.report_id.clone()))?;
        if !cache.contains_key(case.report_id.as_str()) {
            let labels = labeler(report).map_err(|e| EvalError::LabelerFailed {
                id: case.report_id.clone(),
                message: e.to_string(),
            })?;
            cache.insert(&report.id, labels);
        }
        let labels = &cache[case.report_id.as_str()];
        let slot = &mut per_category[case.category_index];
        slot.0 += 1;
        if labels[case.category_index] == 0 {
            slot.1 += 1;
        }
    }
    Ok(NegationSummary { per_category })
}
