//! The shipped liver-CT study setup: category list, answer-word maps,
//! prompt templates, and a synthetic-world recipe whose label phenomena
//! (synonym-only findings, negated mentions) mirror the historical corpus.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::Category;
use crate::date::IsoDate;
use crate::synth::{CategoryPatterns, SynthSpec};
use crate::template::{Template, TemplateFormat};
use crate::verbalizer::{Verbalizer, VerbalizerMode};

/// The seven findings, most to least frequent in the historical pool.
pub fn liver_categories() -> Vec<Category> {
    vec![
        Category::new("Cyst"),
        Category::with_short("Hepatocellular Carcinoma", "HCC"),
        Category::new("Post-Treatment"),
        Category::new("Cirrhosis"),
        Category::new("Steatosis"),
        Category::new("Metastasis"),
        Category::new("Hemangioma"),
    ]
}

/// Answer words per category, primary word first, synonyms after. The
/// synonyms are the ones the synthetic world actually writes, so a
/// multi-word map has real signal to pool over.
pub fn answer_word_lists() -> Vec<(String, Vec<String>)> {
    let lists: [(&str, &[&str]); 7] = [
        ("Cyst", &["cyst"]),
        ("Hepatocellular Carcinoma", &["hcc", "hepatoma"]),
        ("Post-Treatment", &["posttreatment", "tace", "rfa"]),
        ("Cirrhosis", &["cirrhosis"]),
        ("Steatosis", &["steatosis", "fatty", "steatohepatitis"]),
        ("Metastasis", &["metastasis", "metastases"]),
        ("Hemangioma", &["hemangioma"]),
    ];
    lists
        .into_iter()
        .map(|(name, words)| {
            (
                name.to_string(),
                words.iter().map(|w| w.to_string()).collect(),
            )
        })
        .collect()
}

pub fn single_verbalizer() -> Verbalizer {
    Verbalizer::from_word_lists(VerbalizerMode::Single, answer_word_lists())
        .expect("shipped answer words are valid")
}

pub fn multi_verbalizer() -> Verbalizer {
    Verbalizer::from_word_lists(VerbalizerMode::Multi, answer_word_lists())
        .expect("shipped answer words are valid")
}

/// The hand-written cloze scaffold: report, then "the radiology report is
/// related to [MASK]".
pub fn manual_template() -> Template {
    Template::new(
        "manual",
        TemplateFormat::ReportFirst,
        "the radiology report is related to",
        "",
        ".",
    )
    .expect("shipped template is valid")
}

/// Variant of the manual scaffold that names the organ.
pub fn manual_liver_template() -> Template {
    Template::new(
        "manual-liver",
        TemplateFormat::ReportFirst,
        "the liver radiology report is related to",
        "",
        ".",
    )
    .expect("shipped template is valid")
}

/// Five short machine-generated-style scaffolds, both orderings.
pub fn auto_templates() -> Vec<Template> {
    let specs: [(&str, TemplateFormat, &str, &str, &str); 5] = [
        ("auto1", TemplateFormat::AnswerFirst, "hepatic", ":", ""),
        ("auto2", TemplateFormat::AnswerFirst, "liver", ":", ""),
        ("auto3", TemplateFormat::ReportFirst, "hepatic", "", "."),
        ("auto4", TemplateFormat::AnswerFirst, "abdominal", ".", ""),
        ("auto5", TemplateFormat::AnswerFirst, "liver", "in", ""),
    ];
    specs
        .into_iter()
        .map(|(id, format, prefix, infix, suffix)| {
            Template::new(id, format, prefix, infix, suffix).expect("shipped template is valid")
        })
        .collect()
}

/// Reports dated up to and including this day form the training pool
/// (roughly the earliest 70% of the default date range).
pub fn default_cutoff() -> IsoDate {
    IsoDate::new(2014, 12, 31).expect("valid date")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// The default synthetic world: historical positive rates, two categories
/// (Post-Treatment, Steatosis) expressed only through synonyms so name
/// matching cannot find them, and negated name mentions on gold-negative
/// reports.
pub fn default_synth_spec() -> SynthSpec {
    let categories = liver_categories();
    let patterns: [(&[&str], &[&str], f64); 7] = [
        (
            &[
                "a simple cyst is seen in the liver.",
                "tiny cyst noted in the liver.",
            ],
            &["no {mention} is seen.", "without {mention} formation."],
            0.36,
        ),
        (
            &[
                "arterial enhancing hcc in the liver.",
                "infiltrative hcc with washout.",
            ],
            &[
                "no evidence of {mention}.",
                "r/o {mention}.",
            ],
            0.30,
        ),
        (
            &[
                "tace was performed with lipiodol uptake.",
                "rfa ablation zone with stable margin.",
            ],
            &[
                "no {mention} change is seen.",
                "without {mention} effect.",
            ],
            0.34,
        ),
        (
            &[
                "liver cirrhosis with surface nodularity.",
                "cirrhosis with splenomegaly and varices.",
            ],
            &["no {mention}.", "not definite {mention}."],
            0.30,
        ),
        (
            &[
                "diffuse fatty liver is noted.",
                "fatty infiltration of the liver.",
            ],
            &[
                "no {mention} is identified.",
                "negative for {mention}.",
            ],
            0.34,
        ),
        (
            &[
                "multiple hepatic metastases are present.",
                "new metastasis in segment six.",
            ],
            &["no hepatic {mention}.", "rule out {mention}."],
            0.24,
        ),
        (
            &[
                "typical hemangioma with peripheral enhancement.",
                "small hemangioma in the left lobe.",
            ],
            &[
                "no {mention} is demonstrated.",
                "free of {mention}.",
            ],
            0.12,
        ),
    ];
    let categories = categories
        .into_iter()
        .zip(patterns)
        .map(|(category, (positive, negation, positive_rate))| CategoryPatterns {
            category,
            positive: strings(positive),
            negation: strings(negation),
            positive_rate,
        })
        .collect();
    SynthSpec {
        categories,
        fillers: strings(&[
            "the liver is normal in size.",
            "the spleen is unremarkable.",
            "the gallbladder is unremarkable.",
        ]),
        size: 1000,
        negation_rate: 0.20,
        date_start: IsoDate::new(2008, 1, 1).expect("valid date"),
        date_end: IsoDate::new(2017, 12, 31).expect("valid date"),
        id_prefix: "syn".to_string(),
    }
}
