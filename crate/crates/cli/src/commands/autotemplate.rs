//! `autotemplate`: enumerate candidate cloze templates, rank them by a
//! likelihood score, train one model per candidate, and keep the template
//! with the best training-set macro F1.
//!
//! Candidate generation needs a single answer word per category, so the
//! verbalizer is always read in single mode here. Outputs: the selected
//! `template.json`, a `candidates.csv` report sorted by score (descending),
//! and the run manifest.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;

use radlabel_core::corpus::stratified_kshot;
use radlabel_core::defaults;
use radlabel_core::template::{generate_candidates, rank_candidates, GrammarGenerator};
use radlabel_core::labeler::select_best_template;
use radlabel_core::verbalizer::VerbalizerMode;

use crate::formats;
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};
use crate::settings::parse_f64_list;

use super::{
    fixed_train_config, resolve_verbalizer, scorer_config, training_pool, write_csv, CommonOpts,
    Invocation,
};

#[derive(Debug, Args)]
pub struct AutotemplateArgs {
    /// Corpus to train candidate models on (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Training reports to draw; omitted = the whole pre-cutoff pool
    #[arg(long)]
    pub k: Option<usize>,
    /// Answer-word file, read in single mode; omitted = the built-in mapping
    #[arg(long, value_name = "FILE")]
    pub verbalizer: Option<PathBuf>,
    /// Candidates to keep per layout (report-first and answer-first)
    #[arg(long = "per-format", default_value_t = 5)]
    pub per_format: usize,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &AutotemplateArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("autotemplate", invocation.argv.clone());
    manifest.record_input(&args.corpus)?;
    if let Some(path) = &args.verbalizer {
        manifest.record_input(path)?;
    }

    let corpus = formats::load_corpus(&args.corpus)?;
    let cutoff = settings.cutoff("cutoff", Some(defaults::default_cutoff()))?;
    let pool = training_pool(&corpus, cutoff);

    let seed = args.common.seed;
    let train_set = match args.k {
        Some(k) => stratified_kshot(&pool, k, seed).context("sampling failed")?.corpus,
        None => pool,
    };

    let verbalizer = resolve_verbalizer(args.verbalizer.as_deref(), VerbalizerMode::Single)?;
    let generator = GrammarGenerator;
    let candidates = generate_candidates(&generator, &train_set, &verbalizer, args.per_format)
        .context("generating candidates")?;
    let ranked = rank_candidates(candidates, &train_set, &verbalizer, &generator)
        .context("scoring candidates")?;

    let thresholds = parse_f64_list(&settings.get(
        "thresholds",
        "0.2,0.3,0.4,0.5".to_string(),
    )?)?;
    let scorer = scorer_config(&mut settings)?;
    let train_config = fixed_train_config(&mut settings, seed)?;
    let selection = select_best_template(
        &ranked,
        &train_set,
        &verbalizer,
        scorer,
        &train_config,
        &thresholds,
        seed,
    )
    .context("training candidate templates")?;

    let template_path = args.out.join("template.json");
    formats::save_template(&ranked.candidates[selection.best_index], &template_path)?;
    formats::load_template(&template_path).context("validating the written template")?;

    let candidates_path = args.out.join("candidates.csv");
    write_csv(&candidates_path, |w| {
        w.write_record([
            "rank",
            "id",
            "pattern",
            "score",
            "train_macro_f1",
            "final_loss",
            "tau",
            "error",
            "selected",
        ])?;
        for (index, (template, score)) in
            ranked.candidates.iter().zip(&ranked.scores).enumerate()
        {
            let outcome = &selection.outcomes[index];
            w.write_record(&[
                (index + 1).to_string(),
                template.id().to_string(),
                template.pattern(),
                score.to_string(),
                outcome.train_macro_f1.map(|v| v.to_string()).unwrap_or_default(),
                outcome.final_loss.map(|v| v.to_string()).unwrap_or_default(),
                outcome.tau.map(|v| v.to_string()).unwrap_or_default(),
                outcome.error.clone().unwrap_or_default(),
                u8::from(index == selection.best_index).to_string(),
            ])?;
        }
        Ok(())
    })?;

    settings.note("corpus", args.corpus.display());
    if let Some(k) = args.k {
        settings.note("k", k);
    }
    settings.note("per_format", args.per_format);
    settings.note("candidates", ranked.candidates.len());
    settings.note("selected", ranked.candidates[selection.best_index].id());
    settings.note("seed", seed);
    settings.note("out", args.out.display());
    manifest.seeds = vec![seed];
    manifest.config = settings.into_resolved();
    manifest.record_output(&template_path)?;
    manifest.record_output(&candidates_path)?;
    manifest.save(&args.out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}
