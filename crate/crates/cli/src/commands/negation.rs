//! `negation`: score labelers on negated mentions.
//!
//! A negation case is a (report, category) pair where a surface form of the
//! category appears in the text but the gold label is 0. Categories whose
//! mentions are rarely negated (cysts and the like) are excluded by default.
//! The mention baseline and the cue-suppression baseline are always scored;
//! pass `--bundle` to add a trained-model column. Output: `negation.csv` with
//! one row per scored category plus an `overall` row, and the run manifest.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;

use radlabel_core::baselines::{label_match, negation_cue_label, MentionLexicon, NegationCueSet};
use radlabel_core::corpus::Corpus;
use radlabel_core::eval::{
    default_negation_exclusions, extract_negation_cases, negation_accuracy, NegationSummary,
};

use crate::bundle::load_bundle;
use crate::formats;
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};

use super::{record_bundle_inputs, test_side, write_csv, CommonOpts, Invocation};

#[derive(Debug, Args)]
pub struct NegationArgs {
    /// Corpus to analyse (JSON lines); treated as the test set
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Optional model bundle; adds a `model` accuracy column
    #[arg(long, value_name = "DIR")]
    pub bundle: Option<PathBuf>,
    /// Surface-form file for case extraction; omitted = category names
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Negation cue file for the cue baseline; omitted = built-ins
    #[arg(long, value_name = "FILE")]
    pub cues: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &NegationArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("negation", invocation.argv.clone());
    manifest.record_input(&args.corpus)?;
    for path in [&args.lexicon, &args.cues].into_iter().flatten() {
        manifest.record_input(path)?;
    }
    if let Some(dir) = &args.bundle {
        record_bundle_inputs(&mut manifest, dir)?;
    }

    let corpus = formats::load_corpus(&args.corpus)?;
    let cutoff = settings.cutoff("cutoff", None)?;
    let test = test_side(&corpus, cutoff);
    if test.is_empty() {
        bail!("nothing to analyse: the corpus (after any cutoff) is empty");
    }

    let lexicon = match &args.lexicon {
        Some(path) => formats::load_lexicon(path)?,
        None => MentionLexicon::from_category_names(test.categories()),
    };
    let cues = match &args.cues {
        Some(path) => formats::load_cues(path)?,
        None => NegationCueSet::default(),
    };
    let excluded = default_negation_exclusions(test.categories());
    let cases = extract_negation_cases(&test, &lexicon, &excluded);

    let match_summary = negation_accuracy::<_, &str>(
        |report| Ok(label_match(&report.text, &lexicon)),
        &cases,
        &test,
    )
    .context("scoring the mention baseline")?;
    let cue_summary = negation_accuracy::<_, &str>(
        |report| Ok(negation_cue_label(&report.text, &lexicon, &cues)),
        &cases,
        &test,
    )
    .context("scoring the cue baseline")?;
    let model_summary = match &args.bundle {
        Some(dir) => {
            let (model, _) = load_bundle(dir)?;
            model
                .verbalizer()
                .check_alignment(test.categories())
                .context("bundle does not match the corpus categories")?;
            let summary = negation_accuracy(|report| model.predict(&report.text), &cases, &test)
                .context("scoring the model")?;
            Some(summary)
        }
        None => None,
    };

    let out_path = args.out.join("negation.csv");
    write_negation_csv(
        &out_path,
        &test,
        &excluded,
        &match_summary,
        &cue_summary,
        model_summary.as_ref(),
    )?;

    settings.note("corpus", args.corpus.display());
    settings.note("reports", test.len());
    settings.note("cases", cases.len());
    settings.note(
        "excluded",
        join(excluded.iter().map(|&i| test.categories()[i].short_name.clone())),
    );
    if let Some(accuracy) = match_summary.overall() {
        settings.note("label_match_overall", accuracy);
    }
    if let Some(accuracy) = cue_summary.overall() {
        settings.note("negation_cue_overall", accuracy);
    }
    if let Some(accuracy) = model_summary.as_ref().and_then(NegationSummary::overall) {
        settings.note("model_overall", accuracy);
    }
    settings.note("out", args.out.display());
    manifest.seeds = vec![args.common.seed];
    manifest.config = settings.into_resolved();
    manifest.record_output(&out_path)?;
    manifest.save(&args.out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}

fn write_negation_csv(
    path: &Path,
    test: &Corpus,
    excluded: &BTreeSet<usize>,
    match_summary: &NegationSummary,
    cue_summary: &NegationSummary,
    model_summary: Option<&NegationSummary>,
) -> Result<()> {
    write_csv(path, |w| {
        let mut header = vec![
            "category".to_string(),
            "cases".to_string(),
            "label_match".to_string(),
            "negation_cue".to_string(),
        ];
        if model_summary.is_some() {
            header.push("model".to_string());
        }
        w.write_record(&header)?;
        for (i, category) in test.categories().iter().enumerate() {
            if excluded.contains(&i) {
                continue;
            }
            let (cases, _) = match_summary.per_category[i];
            let mut record = vec![
                category.short_name.clone(),
                cases.to_string(),
                cell(match_summary.accuracy(i)),
                cell(cue_summary.accuracy(i)),
            ];
            if let Some(summary) = model_summary {
                record.push(cell(summary.accuracy(i)));
            }
            w.write_record(&record)?;
        }
        let total: usize = match_summary.per_category.iter().map(|&(c, _)| c).sum();
        let mut record = vec![
            "overall".to_string(),
            total.to_string(),
            cell(match_summary.overall()),
            cell(cue_summary.overall()),
        ];
        if let Some(summary) = model_summary {
            record.push(cell(summary.overall()));
        }
        w.write_record(&record)?;
        Ok(())
    })
}

/// Accuracy as a fixed-precision fraction; empty when there were no cases.
fn cell(accuracy: Option<f64>) -> String {
    accuracy.map_or_else(String::new, |a| format!("{a:.4}"))
}

fn join(parts: impl Iterator<Item = String>) -> String {
    parts.collect::<Vec<_>>().join(",")
}
