//! Prompt templates: one report slot, one mask slot, two layouts.
//!
//! A template renders a report into a model input of the form
//! `[CLS] {report} {prefix} [MASK] {suffix} [SEP]` (report first) or
//! `[CLS] {prefix} [MASK] {infix} {report} {suffix} [SEP]` (answer first).
//! Scaffold words are never truncated; when the input would exceed the
//! model's window, report tokens are dropped from the report's end.
//!
//! Automatic template search enumerates candidates from a deterministic
//! grammar generator and ranks them by a summed log-likelihood over the
//! training reports paired with each of their positive answer words.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::corpus::Corpus;
use crate::verbalizer::{Verbalizer, VerbalizerMode};
use crate::vocab::{split_tokens, Vocabulary, CLS_ID, MASK_ID, SEP_ID};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{id}`: `{part}` must not contain a mask or report placeholder")]
    PlaceholderInPart { id: String, part: &'static str },
    #[error("template `{id}`: scaffold alone needs {scaffold} tokens but the window holds {max_len}")]
    ScaffoldTooLong {
        id: String,
        scaffold: usize,
        max_len: usize,
    },
    #[error("template generation failed: {0}")]
    Generator(String),
    #[error("template `{id}` scored a non-finite log-likelihood")]
    NonFiniteScore { id: String },
    #[error("automatic templates need a single-word verbalizer")]
    MultiWordVerbalizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateFormat {
    /// Report body first, cloze at the end.
    ReportFirst,
    /// Cloze first, report body after it.
    AnswerFirst,
}

/// A cloze prompt layout around one report slot and one mask slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    id: String,
    format: TemplateFormat,
    prefix: String,
    infix: String,
    suffix: String,
}

/// A rendered model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub tokens: Vec<u32>,
    pub mask_pos: usize,
}

impl Template {
    pub fn new(
        id: &str,
        format: TemplateFormat,
        prefix: &str,
        infix: &str,
        suffix: &str,
    ) -> Result<Self, TemplateError> {
        for (part, text) in [("prefix", prefix), ("infix", infix), ("suffix", suffix)] {
            let lower = text.to_lowercase();
            if lower.contains("[mask]") || lower.contains("[report]") {
                return Err(TemplateError::PlaceholderInPart {
                    id: id.to_owned(),
                    part,
                });
            }
        }
        Ok(Self {
            id: id.to_owned(),
            format,
            prefix: prefix.to_owned(),
            infix: infix.to_owned(),
            suffix: suffix.to_owned(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn format(&self) -> TemplateFormat {
        self.format
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn infix(&self) -> &str {
        &self.infix
    }

    pub fn suffix(&self) -> &str {
        &self.suffix
    }

    /// Canonical rendered shape with placeholder slots; unique per layout.
    /// Used for de-duplication and as the deterministic tie-break key.
    pub fn pattern(&self) -> String {
        let parts: Vec<&str> = match self.format {
            TemplateFormat::ReportFirst => {
                alloc::vec!["[CLS]", "[REPORT]", &self.prefix, "[MASK]", &self.suffix, "[SEP]"]
            }
            TemplateFormat::AnswerFirst => alloc::vec![
                "[CLS]",
                &self.prefix,
                "[MASK]",
                &self.infix,
                "[REPORT]",
                &self.suffix,
                "[SEP]"
            ],
        };
        let mut out = String::new();
        for part in parts {
            let trimmed = part.trim();
            if trimmed.is_empty() {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(trimmed);
        }
        out
    }

    /// Scaffold words that must be in-vocabulary for rendering.
    pub fn scaffold_words(&self) -> Vec<String> {
        let mut words = split_tokens(&self.prefix);
        words.extend(split_tokens(&self.infix));
        words.extend(split_tokens(&self.suffix));
        words
    }

    /// Tokenize the report into this layout, keeping the whole scaffold and
    /// dropping report tokens from the end when `max_len` would be exceeded.
    pub fn render(
        &self,
        report_text: &str,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Rendered, TemplateError> {
        let prefix = vocab.tokenize(&self.prefix);
        let infix = vocab.tokenize(&self.infix);
        let suffix = vocab.tokenize(&self.suffix);
        let scaffold = match self.format {
            TemplateFormat::ReportFirst => 3 + prefix.len() + suffix.len(),
            TemplateFormat::AnswerFirst => 3 + prefix.len() + infix.len() + suffix.len(),
        };
        if scaffold > max_len {
            return Err(TemplateError::ScaffoldTooLong {
                id: self.id.clone(),
                scaffold,
                max_len,
            });
        }
        let mut report = vocab.tokenize(report_text);
        report.truncate(max_len - scaffold);

        let mut tokens = Vec::with_capacity(scaffold + report.len());
        tokens.push(CLS_ID);
        match self.format {
            TemplateFormat::ReportFirst => {
                tokens.extend_from_slice(&report);
                tokens.extend_from_slice(&prefix);
                tokens.push(MASK_ID);
                tokens.extend_from_slice(&suffix);
            }
            TemplateFormat::AnswerFirst => {
                tokens.extend_from_slice(&prefix);
                tokens.push(MASK_ID);
                tokens.extend_from_slice(&infix);
                tokens.extend_from_slice(&report);
                tokens.extend_from_slice(&suffix);
            }
        }
        tokens.push(SEP_ID);
        let mask_pos = tokens
            .iter()
            .position(|&t| t == MASK_ID)
            .expect("layout always emits one mask");
        Ok(Rendered { tokens, mask_pos })
    }
}

/// Candidate templates with their joint log-likelihood scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub candidates: Vec<Template>,
    pub scores: Vec<f64>,
}

/// Source of candidate scaffolds and of conditional template likelihoods.
pub trait TemplateGenerator {
    /// Propose up to `limit` templates of the given layout, conditioned on
    /// `(report text, answer word)` pairs from the training set.
    fn propose(
        &self,
        format: TemplateFormat,
        pairs: &[(&str, &str)],
        limit: usize,
    ) -> Result<Vec<Template>, TemplateError>;

    /// Log-likelihood of the template filled with `answer_word`, conditioned
    /// on `report_text`.
    fn log_likelihood(
        &self,
        template: &Template,
        report_text: &str,
        answer_word: &str,
    ) -> Result<f64, TemplateError>;
}

/// Deterministic grammar-based generator: enumerates subject words crossed
/// with connector shapes, and scores templates with an additively smoothed
/// unigram model of the report's tokens. A stand-in for a learned generator
/// that keeps the search reproducible and dependency-free.
#[derive(Debug, Clone, Default)]
pub struct GrammarGenerator;

const SUBJECTS: [&str; 10] = [
    "hepatic", "liver", "abdominal", "radiology", "imaging", "clinical", "diagnostic", "medical",
    "ct", "scan",
];
const ANSWER_FIRST_SHAPES: [(&str, &str); 5] =
    [(":", ""), (".", ""), ("in", ""), ("of", ""), ("for", "")];
const REPORT_FIRST_SHAPES: [(&str, &str); 5] =
    [("", "."), ("", ":"), ("", ""), ("shows", "."), ("with", ".")];

impl TemplateGenerator for GrammarGenerator {
    fn propose(
        &self,
        format: TemplateFormat,
        _pairs: &[(&str, &str)],
        limit: usize,
    ) -> Result<Vec<Template>, TemplateError> {
        let mut out = Vec::new();
        match format {
            TemplateFormat::AnswerFirst => {
                for (s, subject) in SUBJECTS.iter().enumerate() {
                    for (c, (infix, suffix)) in ANSWER_FIRST_SHAPES.iter().enumerate() {
                        if out.len() == limit {
                            return Ok(out);
                        }
                        out.push(Template::new(
                            &format!("auto-a{}", s * ANSWER_FIRST_SHAPES.len() + c + 1),
                            format,
                            subject,
                            infix,
                            suffix,
                        )?);
                    }
                }
            }
            TemplateFormat::ReportFirst => {
                for (s, subject) in SUBJECTS.iter().enumerate() {
                    for (c, (extra, suffix)) in REPORT_FIRST_SHAPES.iter().enumerate() {
                        if out.len() == limit {
                            return Ok(out);
                        }
                        let prefix = if extra.is_empty() {
                            (*subject).to_string()
                        } else {
                            format!("{subject} {extra}")
                        };
                        out.push(Template::new(
                            &format!("auto-r{}", s * REPORT_FIRST_SHAPES.len() + c + 1),
                            format,
                            &prefix,
                            "",
                            suffix,
                        )?);
                    }
                }
            }
        }
        Ok(out)
    }

    fn log_likelihood(
        &self,
        template: &Template,
        report_text: &str,
        answer_word: &str,
    ) -> Result<f64, TemplateError> {
        let bag = split_tokens(report_text);
        let mut scored = template.scaffold_words();
        scored.extend(split_tokens(answer_word));
        let denom = (bag.len() + 50) as f64;
        let mut total = 0.0;
        for word in &scored {
            let count = bag.iter().filter(|t| *t == word).count() as f64;
            total += libm::log((count + 0.5) / denom);
        }
        Ok(total)
    }
}

/// `(report text, answer word)` pairs: each report duplicated once per
/// positive category, in corpus order.
pub fn conditioning_pairs<'a>(
    train: &'a Corpus,
    verbalizer: &'a Verbalizer,
) -> Result<Vec<(&'a str, &'a str)>, TemplateError> {
    if verbalizer.mode() != VerbalizerMode::Single {
        return Err(TemplateError::MultiWordVerbalizer);
    }
    let mut pairs = Vec::new();
    for report in train.reports() {
        for (i, &g) in report.gold.iter().enumerate() {
            if g == 1 {
                pairs.push((report.text.as_str(), verbalizer.category_words(i)[0].as_str()));
            }
        }
    }
    Ok(pairs)
}

/// Enumerate up to `per_format` candidates of each layout, de-duplicated by
/// rendered pattern. Scores are zero until [`rank_candidates`] fills them.
pub fn generate_candidates(
    generator: &dyn TemplateGenerator,
    train: &Corpus,
    verbalizer: &Verbalizer,
    per_format: usize,
) -> Result<CandidateSet, TemplateError> {
    let pairs = conditioning_pairs(train, verbalizer)?;
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    for format in [TemplateFormat::ReportFirst, TemplateFormat::AnswerFirst] {
        let mut kept = 0usize;
        for template in generator.propose(format, &pairs, per_format)? {
            if kept == per_format {
                break;
            }
            if seen.insert(template.pattern()) {
                candidates.push(template);
                kept += 1;
            }
        }
    }
    let scores = alloc::vec![0.0; candidates.len()];
    Ok(CandidateSet { candidates, scores })
}

/// Score every candidate by the sum of generator log-likelihoods over all
/// conditioning pairs and sort best first (ties: pattern ascending).
pub fn rank_candidates(
    set: CandidateSet,
    train: &Corpus,
    verbalizer: &Verbalizer,
    generator: &dyn TemplateGenerator,
) -> Result<CandidateSet, TemplateError> {
    let pairs = conditioning_pairs(train, verbalizer)?;
    let mut scored: Vec<(Template, f64)> = Vec::with_capacity(set.candidates.len());
    for template in set.candidates {
        let mut total = 0.0;
        for &(report, word) in &pairs {
            total += generator.log_likelihood(&template, report, word)?;
        }
        if !total.is_finite() {
            return Err(TemplateError::NonFiniteScore {
                id: template.id().to_owned(),
            });
        }
        scored.push((template, total));
    }
    scored.sort_by(|(ta, sa), (tb, sb)| {
        sb.partial_cmp(sa)
            .expect("scores are finite")
            .then_with(|| ta.pattern().cmp(&tb.pattern()))
    });
    let (candidates, scores) = scored.into_iter().unzip();
    Ok(CandidateSet { candidates, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, Report};
    use alloc::vec;
    use proptest::prelude::*;

    fn manual() -> Template {
        Template::new(
            "manual",
            TemplateFormat::ReportFirst,
            "the radiology report is related to",
            "",
            ".",
        )
        .unwrap()
    }

    #[test]
    fn renders_report_first_layout_verbatim() {
        let vocab = Vocabulary::build(
            ["mild liver cirrhosis . the radiology report is related to"],
            [],
        )
        .unwrap();
        let rendered = manual().render("Mild liver cirrhosis.", &vocab, 64).unwrap();
        let expect: Vec<u32> = ["mild", "liver", "cirrhosis", ".", "the", "radiology", "report", "is", "related", "to"]
            .iter()
            .map(|w| vocab.id(w))
            .collect();
        let mut full = vec![CLS_ID];
        full.extend(expect);
        full.push(MASK_ID);
        full.push(vocab.id("."));
        full.push(SEP_ID);
        assert_eq!(rendered.tokens, full);
        assert_eq!(rendered.mask_pos, 11);
    }

    #[test]
    fn answer_first_mask_precedes_report() {
        let vocab = Vocabulary::build(["some findings here"], ["hepatic", ":"]).unwrap();
        let t = Template::new("a1", TemplateFormat::AnswerFirst, "hepatic", ":", "").unwrap();
        let rendered = t.render("some findings here", &vocab, 32).unwrap();
        let mask = rendered.mask_pos;
        let report_start = rendered
            .tokens
            .iter()
            .position(|&id| id == vocab.id("some"))
            .unwrap();
        assert!(mask < report_start);
        assert_eq!(rendered.tokens[mask], MASK_ID);
    }

    #[test]
    fn truncation_drops_only_trailing_report_tokens() {
        let vocab = Vocabulary::build(["a b c d e f g h"], ["tail", "."]).unwrap();
        let t = Template::new("t", TemplateFormat::ReportFirst, "tail", "", ".").unwrap();
        // scaffold: [CLS] tail [MASK] . [SEP] = 5 tokens; window 9 leaves 4 report tokens
        let rendered = t.render("a b c d e f g h", &vocab, 9).unwrap();
        assert_eq!(rendered.tokens.len(), 9);
        let words: Vec<&str> = rendered
            .tokens
            .iter()
            .map(|&id| vocab.token(id).unwrap())
            .collect();
        assert_eq!(
            words,
            ["[CLS]", "a", "b", "c", "d", "tail", "[MASK]", ".", "[SEP]"]
        );
        assert!(matches!(
            t.render("a", &vocab, 4),
            Err(TemplateError::ScaffoldTooLong { .. })
        ));
    }

    #[test]
    fn empty_report_renders_scaffold_only() {
        let vocab = Vocabulary::build([], ["hepatic"]).unwrap();
        let t = Template::new("a", TemplateFormat::AnswerFirst, "hepatic", "", "").unwrap();
        let rendered = t.render("", &vocab, 16).unwrap();
        assert_eq!(rendered.tokens, vec![CLS_ID, vocab.id("hepatic"), MASK_ID, SEP_ID]);
    }

    #[test]
    fn parts_reject_placeholders() {
        let err = Template::new("x", TemplateFormat::ReportFirst, "about [MASK]", "", "");
        assert!(matches!(err, Err(TemplateError::PlaceholderInPart { .. })));
    }

    fn tiny_train() -> (Corpus, Verbalizer) {
        let corpus = Corpus::new(
            vec![Category::new("A"), Category::new("B")],
            vec![
                Report {
                    id: "r1".into(),
                    date: "2014-01-01".parse().unwrap(),
                    text: "alpha present".into(),
                    gold: vec![1, 1],
                },
                Report {
                    id: "r2".into(),
                    date: "2014-01-02".parse().unwrap(),
                    text: "beta only".into(),
                    gold: vec![0, 1],
                },
            ],
        )
        .unwrap();
        let verbalizer = Verbalizer::from_word_lists(
            VerbalizerMode::Single,
            vec![
                ("A".into(), vec!["alpha".into()]),
                ("B".into(), vec!["beta".into()]),
            ],
        )
        .unwrap();
        (corpus, verbalizer)
    }

    #[test]
    fn multi_label_reports_duplicate_conditioning_pairs() {
        let (corpus, verbalizer) = tiny_train();
        let pairs = conditioning_pairs(&corpus, &verbalizer).unwrap();
        assert_eq!(
            pairs,
            vec![
                ("alpha present", "alpha"),
                ("alpha present", "beta"),
                ("beta only", "beta"),
            ]
        );
    }

    #[test]
    fn generates_requested_count_per_format_without_duplicates() {
        let (corpus, verbalizer) = tiny_train();
        let set = generate_candidates(&GrammarGenerator, &corpus, &verbalizer, 2).unwrap();
        assert_eq!(set.candidates.len(), 4);
        let report_first = set
            .candidates
            .iter()
            .filter(|t| t.format() == TemplateFormat::ReportFirst)
            .count();
        assert_eq!(report_first, 2);
        let patterns: BTreeSet<String> = set.candidates.iter().map(Template::pattern).collect();
        assert_eq!(patterns.len(), 4);
    }

    /// Generator that proposes one template twice under different ids.
    struct Repeating;

    impl TemplateGenerator for Repeating {
        fn propose(
            &self,
            format: TemplateFormat,
            _pairs: &[(&str, &str)],
            _limit: usize,
        ) -> Result<Vec<Template>, TemplateError> {
            Ok(vec![
                Template::new("first", format, "liver", "", "")?,
                Template::new("second", format, "liver", "", "")?,
            ])
        }

        fn log_likelihood(&self, _: &Template, _: &str, _: &str) -> Result<f64, TemplateError> {
            Ok(0.0)
        }
    }

    #[test]
    fn duplicate_patterns_are_dropped() {
        let (corpus, verbalizer) = tiny_train();
        let set = generate_candidates(&Repeating, &corpus, &verbalizer, 5).unwrap();
        // one survivor per format: the two formats render distinct patterns
        assert_eq!(set.candidates.len(), 2);
        assert_eq!(set.candidates[0].id(), "first");
    }

    /// Fixed per-pair scores: candidate ids map to per-pair log-probs.
    struct FixedScores;

    impl TemplateGenerator for FixedScores {
        fn propose(
            &self,
            _format: TemplateFormat,
            _pairs: &[(&str, &str)],
            _limit: usize,
        ) -> Result<Vec<Template>, TemplateError> {
            Ok(Vec::new())
        }

        fn log_likelihood(
            &self,
            template: &Template,
            report_text: &str,
            _answer_word: &str,
        ) -> Result<f64, TemplateError> {
            let first_pair = report_text.starts_with("alpha");
            Ok(match (template.id(), first_pair) {
                ("c1", true) => -1.0,
                ("c1", false) => -2.0,
                ("c2", true) => -1.5,
                ("c2", false) => -1.4,
                _ => 0.0,
            })
        }
    }

    #[test]
    fn ranking_sums_pair_scores_and_sorts_descending() {
        // two pairs: one "alpha..." report and one other report
        let corpus = Corpus::new(
            vec![Category::new("A")],
            vec![
                Report {
                    id: "r1".into(),
                    date: "2014-01-01".parse().unwrap(),
                    text: "alpha one".into(),
                    gold: vec![1],
                },
                Report {
                    id: "r2".into(),
                    date: "2014-01-02".parse().unwrap(),
                    text: "other one".into(),
                    gold: vec![1],
                },
            ],
        )
        .unwrap();
        let verbalizer = Verbalizer::from_word_lists(
            VerbalizerMode::Single,
            vec![("A".into(), vec!["alpha".into()])],
        )
        .unwrap();
        let set = CandidateSet {
            candidates: vec![
                Template::new("c1", TemplateFormat::ReportFirst, "one", "", "").unwrap(),
                Template::new("c2", TemplateFormat::ReportFirst, "two", "", "").unwrap(),
            ],
            scores: vec![0.0, 0.0],
        };
        let ranked = rank_candidates(set, &corpus, &verbalizer, &FixedScores).unwrap();
        // c1 totals -3.0, c2 totals -2.9: c2 first
        assert_eq!(ranked.candidates[0].id(), "c2");
        assert!((ranked.scores[0] - -2.9).abs() < 1e-12);
        assert!((ranked.scores[1] - -3.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_ignores_training_order() {
        let (corpus, verbalizer) = tiny_train();
        let set = generate_candidates(&GrammarGenerator, &corpus, &verbalizer, 3).unwrap();
        let ranked = rank_candidates(set.clone(), &corpus, &verbalizer, &GrammarGenerator).unwrap();
        let reversed_reports: Vec<Report> = corpus.reports().iter().rev().cloned().collect();
        let reversed = Corpus::new(corpus.categories().to_vec(), reversed_reports).unwrap();
        let ranked_rev = rank_candidates(set, &reversed, &verbalizer, &GrammarGenerator).unwrap();
        let ids: Vec<&str> = ranked.candidates.iter().map(Template::id).collect();
        let ids_rev: Vec<&str> = ranked_rev.candidates.iter().map(Template::id).collect();
        assert_eq!(ids, ids_rev);
    }

    proptest! {
        /// Any template/report/window combination yields exactly one mask and
        /// never loses scaffold tokens.
        #[test]
        fn rendering_always_has_one_mask(
            report in "[a-d ]{0,40}",
            prefix in "[e-h]{1,6}( [e-h]{1,6})?",
            answer_first in proptest::bool::ANY,
            max_len in 8usize..40,
        ) {
            let vocab = Vocabulary::build([report.as_str(), prefix.as_str()], []).unwrap();
            let format = if answer_first {
                TemplateFormat::AnswerFirst
            } else {
                TemplateFormat::ReportFirst
            };
            let t = Template::new("p", format, &prefix, "", ".").unwrap();
            let rendered = t.render(&report, &vocab, max_len).unwrap();
            let masks = rendered.tokens.iter().filter(|&&id| id == MASK_ID).count();
            prop_assert_eq!(masks, 1);
            prop_assert_eq!(rendered.tokens[rendered.mask_pos], MASK_ID);
            prop_assert!(rendered.tokens.len() <= max_len);
            // scaffold intact: prefix tokens all present
            for word in split_tokens(&prefix) {
                prop_assert!(rendered.tokens.contains(&vocab.id(&word)));
            }
        }
    }
}
