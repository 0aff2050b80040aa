//! `eval`: score a labeler on a corpus.
//!
//! The labeler is either a trained model bundle (`--bundle`) or one of the
//! rule baselines (`--baseline label-match|negation-cue|llm-fixture`). The
//! given corpus is evaluated as-is; set `cutoff` to score only the reports
//! dated after it. Outputs: `results.csv` (one row), `predictions.csv`,
//! `summary.json`, and the run manifest.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args};

use radlabel_core::baselines::{
    build_chat_request, chat_label, label_match, negation_cue_label, MapTransport, MentionLexicon,
    NegationCueSet,
};
use radlabel_core::corpus::Corpus;
use radlabel_core::eval::f1_scores;

use crate::bundle::load_bundle;
use crate::formats;
use crate::manifest::{RunManifest, RUN_MANIFEST_FILE};

use super::{
    config_label, golds_of, metrics_map, predict_all, single_run_summary, test_side,
    write_json, write_predictions_csv, write_results_csv, BaselineArg, CommonOpts, Invocation,
    ResultRow,
};

#[derive(Debug, Args)]
#[command(group = ArgGroup::new("labeler").required(true))]
pub struct EvalArgs {
    /// Corpus to score (JSON lines); treated as the test set
    #[arg(long, value_name = "FILE")]
    pub corpus: PathBuf,
    /// Model bundle directory to evaluate
    #[arg(long, value_name = "DIR", group = "labeler")]
    pub bundle: Option<PathBuf>,
    /// Rule baseline to evaluate instead of a bundle
    #[arg(long, value_enum, group = "labeler")]
    pub baseline: Option<BaselineArg>,
    /// Surface-form file for the rule baselines; omitted = category names
    #[arg(long, value_name = "FILE")]
    pub lexicon: Option<PathBuf>,
    /// Negation cue file for the negation-cue baseline; omitted = built-ins
    #[arg(long, value_name = "FILE")]
    pub cues: Option<PathBuf>,
    /// Recorded responses for the llm-fixture baseline
    #[arg(long, value_name = "FILE")]
    pub fixture: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonOpts,
}

pub fn run(args: &EvalArgs, invocation: &Invocation) -> Result<()> {
    let mut settings = args.common.settings()?;
    let mut manifest = RunManifest::new("eval", invocation.argv.clone());
    manifest.record_input(&args.corpus)?;
    for path in [&args.lexicon, &args.cues, &args.fixture].into_iter().flatten() {
        manifest.record_input(path)?;
    }
    if let Some(dir) = &args.bundle {
        super::record_bundle_inputs(&mut manifest, dir)?;
    }

    let corpus = formats::load_corpus(&args.corpus)?;
    let cutoff = settings.cutoff("cutoff", None)?;
    let test = test_side(&corpus, cutoff);
    if test.is_empty() {
        bail!("nothing to evaluate: the corpus (after any cutoff) is empty");
    }

    let (preds, seed, label) = label_corpus(args, &test)?;
    let golds = golds_of(&test);
    let f1 = f1_scores(&preds, &golds).context("scoring")?;

    let results_path = args.out.join("results.csv");
    write_results_csv(
        &results_path,
        test.categories(),
        false,
        &[ResultRow {
            size: None,
            seed,
            config: label.clone(),
            f1: f1.clone(),
        }],
    )?;
    let predictions_path = args.out.join("predictions.csv");
    write_predictions_csv(&predictions_path, &test, &preds)?;
    let summary_path = args.out.join("summary.json");
    write_json(&summary_path, &single_run_summary(&metrics_map(test.categories(), &f1)))?;

    settings.note("corpus", args.corpus.display());
    settings.note("labeler", label);
    settings.note("reports", test.len());
    settings.note("macro_f1", f1.macro_f1);
    settings.note("micro_f1", f1.micro_f1);
    settings.note("seed", seed);
    settings.note("out", args.out.display());
    manifest.seeds = vec![seed];
    manifest.config = settings.into_resolved();
    for path in [&results_path, &predictions_path, &summary_path] {
        manifest.record_output(path)?;
    }
    manifest.save(&args.out.join(RUN_MANIFEST_FILE))?;
    Ok(())
}

/// Run the selected labeler over every report. Returns the predictions, the
/// seed to report (the bundle's training seed, 0 for baselines), and a
/// descriptive config label.
fn label_corpus(args: &EvalArgs, test: &Corpus) -> Result<(Vec<Vec<u8>>, u64, String)> {
    if let Some(dir) = &args.bundle {
        let (model, bundle_manifest) = load_bundle(dir)?;
        model
            .verbalizer()
            .check_alignment(test.categories())
            .context("bundle does not match the corpus categories")?;
        let train_config = radlabel_core::labeler::TrainConfig {
            learning_rate: bundle_manifest.config.learning_rate,
            batch_size: bundle_manifest.config.batch_size,
            warmup_ratio: bundle_manifest.config.warmup_ratio,
            epochs: bundle_manifest.config.epochs,
            seed: bundle_manifest.seed,
        };
        let label = config_label(
            &train_config,
            bundle_manifest.tau,
            &bundle_manifest.config.verbalizer_mode,
        );
        let preds = predict_all(test, |report| {
            model.predict(&report.text).map_err(Into::into)
        })?;
        return Ok((preds, bundle_manifest.seed, label));
    }

    let baseline = args.baseline.expect("clap enforces bundle xor baseline");
    let lexicon = match &args.lexicon {
        Some(path) => formats::load_lexicon(path)?,
        None => MentionLexicon::from_category_names(test.categories()),
    };
    let preds = match baseline {
        BaselineArg::LabelMatch => {
            predict_all(test, |report| Ok(label_match(&report.text, &lexicon)))?
        }
        BaselineArg::NegationCue => {
            let cues = match &args.cues {
                Some(path) => formats::load_cues(path)?,
                None => NegationCueSet::default(),
            };
            predict_all(test, |report| {
                Ok(negation_cue_label(&report.text, &lexicon, &cues))
            })?
        }
        BaselineArg::LlmFixture => {
            let Some(path) = &args.fixture else {
                bail!("--baseline llm-fixture requires --fixture");
            };
            let transport = MapTransport::new(formats::load_fixture(path)?);
            let categories = test.categories().to_vec();
            predict_all(test, |report| {
                let request = build_chat_request(&report.text, &categories);
                let exchange = chat_label(&transport, request, &categories)?;
                Ok(exchange.labels)
            })?
        }
    };
    Ok((preds, 0, baseline.name().to_string()))
}
