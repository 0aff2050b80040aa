//! `train`: fit a cloze-prompt labeler and save it as a model bundle.
//!
//! The corpus is restricted to the pre-cutoff pool, optionally subsampled to
//! K reports (the token vocabulary still comes from the whole pool), and the
//! model is trained either with one fixed configuration
//! (settings `learning_rate`, `batch_size`, `warmup_ratio`, `epochs`, flag
//! `--tau`) or by searching a `--grid` file over those settings and the
//! threshold. Outputs: the bundle files, a loss trace, the grid log when a
//! search ran, and the run manifest.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;

use radlabel_core::corpus::stratified_kshot;
use radlabel_core::defaults;
use radlabel_core::labeler::training_vocabulary;

use crate::bundle::{save_bundle, load_bundle, BundleManifest};
use crate::formats;
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};

use super::{
    fit, fixed_train_config, resolve_template, resolve_verbalizer, scorer_config, training_pool,
    write_grid_runs_csv, write_trace_csv, CommonOpts, Invocation, ModeArg,
};

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus to train on (JSON lines)
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Training reports to draw; omitted = the whole pre-cutoff pool
    #[arg(long)]
    pub k: Option<usize>,
    /// Answer-word file; omitted = the built-in liver mapping
    #[arg(long, value_name = "FILE")]
    pub verbalizer: Option<PathBuf>,
    /// Keep one answer word per category or all of them
    #[arg(long = "verbalizer-mode", value_enum, default_value = "multi")]
    pub verbalizer_mode: ModeArg,
    /// Template file; omitted = the built-in descriptive template
    #[arg(long, value_name = "FILE")]
    pub template: Option<PathBuf>,
    /// Hyperparameter grid JSON; omitted = one fixed configuration
    #[arg(long, value_name = "FILE")]
    pub grid: Option<PathBuf>,
    /// Decision threshold for the fixed configuration (default 0.5)
    #[arg(long, conflicts_with = "grid")]
    pub tau: Option<f64>,
    /// Bundle directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &TrainArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("train", invocation.argv.clone());
    manifest.record_input(&args.corpus)?;
    for path in [&args.verbalizer, &args.template, &args.grid].into_iter().flatten() {
        manifest.record_input(path)?;
    }

    let corpus = formats::load_corpus(&args.corpus)?;
    let cutoff = settings.cutoff("cutoff", Some(defaults::default_cutoff()))?;
    let pool = training_pool(&corpus, cutoff);
    if pool.is_empty() {
        bail!("training pool is empty");
    }

    let seed = args.common.seed;
    let train_set = match args.k {
        Some(k) => {
            let sample = stratified_kshot(&pool, k, seed).context("sampling failed")?;
            if sample.degraded {
                eprintln!(
                    "warning: some category missed its proportional positive count by more than one"
                );
            }
            sample.corpus
        }
        None => pool.clone(),
    };

    let mode = args.verbalizer_mode;
    let verbalizer = resolve_verbalizer(args.verbalizer.as_deref(), mode.to_mode())?;
    let template = resolve_template(args.template.as_deref())?;
    // The vocabulary comes from the whole pool, not just the K sampled
    // reports: text is available even where labels are not, and a fuller
    // vocabulary keeps test-time tokens from collapsing to the unknown token.
    let vocab = training_vocabulary(&pool, &verbalizer, std::slice::from_ref(&template))
        .context("building vocabulary")?;
    let scorer = scorer_config(&mut settings)?;

    let grid = args.grid.as_deref().map(formats::load_grid).transpose()?;
    let fixed = fixed_train_config(&mut settings, seed)?;
    let tau = args.tau.unwrap_or(0.5);

    let outcome = fit(
        &train_set,
        &verbalizer,
        &template,
        &vocab,
        scorer,
        grid.as_ref(),
        &fixed,
        tau,
        seed,
    )?;

    let bundle_manifest =
        BundleManifest::from_training(&outcome.config, outcome.model.tau(), mode.name());
    let mut written = save_bundle(&args.out, &outcome.model, &bundle_manifest)?;

    let trace_path = args.out.join("trace.csv");
    write_trace_csv(&trace_path, &outcome.report)?;
    written.push(trace_path);
    if let Some(runs) = &outcome.grid_runs {
        let grid_path = args.out.join("grid_runs.csv");
        write_grid_runs_csv(&grid_path, runs)?;
        written.push(grid_path);
    }

    // Validate the bundle by reloading it and comparing parameters bit for bit.
    let (reloaded, _) = load_bundle(&args.out).context("validating the written bundle")?;
    if reloaded.scorer().params() != outcome.model.scorer().params() {
        bail!("bundle validation failed: reloaded parameters differ");
    }

    settings.note("corpus", args.corpus.display());
    if let Some(k) = args.k {
        settings.note("k", k);
    }
    settings.note("train_reports", train_set.len());
    settings.note("verbalizer", source_label(args.verbalizer.as_deref()));
    settings.note("verbalizer_mode", mode.name());
    settings.note("template", source_label(args.template.as_deref()));
    match &args.grid {
        Some(path) => settings.note("grid", path.display().to_string()),
        None => settings.note("grid", "fixed"),
    }
    settings.note("tau", outcome.model.tau());
    settings.note("chosen_learning_rate", outcome.config.learning_rate);
    settings.note("chosen_batch_size", outcome.config.batch_size);
    settings.note("chosen_warmup_ratio", outcome.config.warmup_ratio);
    settings.note("chosen_epochs", outcome.config.epochs);
    settings.note("seed", seed);
    settings.note("out", args.out.display());
    manifest.seeds = vec![seed];
    manifest.config = settings.into_resolved();
    for path in &written {
        manifest.record_output(path)?;
    }
    manifest.save(&args.out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}

fn source_label(path: Option<&std::path::Path>) -> String {
    path.map_or_else(|| "builtin".to_string(), |p| p.display().to_string())
}
