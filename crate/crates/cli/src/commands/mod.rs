//! The seven subcommands and the plumbing they share.

pub mod autotemplate;
pub mod eval;
pub mod negation;
pub mod sample;
pub mod synth;
pub mod sweep;
pub mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::Serialize;

use radlabel_core::corpus::{chronological_split, Category, Corpus};
use radlabel_core::date::IsoDate;
use radlabel_core::defaults;
use radlabel_core::eval::{F1Report, MultiRunSummary};
use radlabel_core::labeler::{
    grid_search, GridRun, GridSpec, PromptModel, TrainConfig, TrainReport,
};
use radlabel_core::scorer::{ToyMlm, ToyMlmConfig};
use radlabel_core::template::Template;
use radlabel_core::verbalizer::{Verbalizer, VerbalizerMode};
use radlabel_core::vocab::Vocabulary;

use crate::artifact::write_atomic;
use crate::formats;
use crate::settings::Settings;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus from a world description
    Synth(synth::SynthArgs),
    /// Draw a stratified K-shot training sample from a corpus
    Sample(sample::SampleArgs),
    /// Train a cloze-prompt labeler and save it as a model bundle
    Train(train::TrainArgs),
    /// Generate and rank cloze templates, keeping the best performer
    Autotemplate(autotemplate::AutotemplateArgs),
    /// Score a model bundle or a rule baseline on a corpus
    Eval(eval::EvalArgs),
    /// Measure accuracy on negated mentions per labeler
    Negation(negation::NegationArgs),
    /// Train and evaluate across several training-set sizes
    Sweep(sweep::SweepArgs),
}

/// The argument vector this process was invoked with (binary name stripped),
/// recorded verbatim in run manifests so runs can be replayed.
pub struct Invocation {
    pub argv: Vec<String>,
}

pub fn dispatch(command: &Command, invocation: &Invocation) -> Result<()> {
    match command {
        Command::Synth(args) => synth::run(args, invocation),
        Command::Sample(args) => sample::run(args, invocation),
        Command::Train(args) => train::run(args, invocation),
        Command::Autotemplate(args) => autotemplate::run(args, invocation),
        Command::Eval(args) => eval::run(args, invocation),
        Command::Negation(args) => negation::run(args, invocation),
        Command::Sweep(args) => sweep::run(args, invocation),
    }
}

/// Flags every subcommand accepts.
#[derive(Debug, Args)]
pub struct CommonOpts {
    /// Flat key=value settings file; flags and --set override it
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one settings key (repeatable), e.g. --set epochs=24
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Root random seed for this command
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl CommonOpts {
    pub fn settings(&self) -> Result<Settings> {
        Settings::load(self.config.as_deref(), &self.set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Single,
    Multi,
}

impl ModeArg {
    pub fn to_mode(self) -> VerbalizerMode {
        match self {
            ModeArg::Single => VerbalizerMode::Single,
            ModeArg::Multi => VerbalizerMode::Multi,
        }
    }

    pub fn name(self) -> &'static str {
        formats::mode_name(self.to_mode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    /// Positive iff a surface form of the category occurs
    LabelMatch,
    /// Like label-match, but mentions under a negation cue do not count
    NegationCue,
    /// Replay recorded chat-model responses from a fixture file
    LlmFixture,
}

impl BaselineArg {
    pub fn name(self) -> &'static str {
        match self {
            BaselineArg::LabelMatch => "label-match",
            BaselineArg::NegationCue => "negation-cue",
            BaselineArg::LlmFixture => "llm-fixture",
        }
    }
}

// --- shared resolution helpers --------------------------------------------

pub(crate) fn scorer_config(settings: &mut Settings) -> Result<ToyMlmConfig> {
    let dim = settings.get("dim", ToyMlmConfig::default().dim)?;
    let mut config = ToyMlmConfig::with_dim(dim);
    config.max_len = settings.get("max_len", config.max_len)?;
    if let Some(scale) = settings.get_opt::<f64>("init_scale")? {
        config.init_scale = scale;
    }
    Ok(config)
}

pub(crate) fn fixed_train_config(settings: &mut Settings, seed: u64) -> Result<TrainConfig> {
    let defaults = TrainConfig::default();
    Ok(TrainConfig {
        learning_rate: settings.get("learning_rate", defaults.learning_rate)?,
        batch_size: settings.get("batch_size", defaults.batch_size)?,
        warmup_ratio: settings.get("warmup_ratio", defaults.warmup_ratio)?,
        epochs: settings.get("epochs", defaults.epochs)?,
        seed,
    })
}

pub(crate) fn resolve_verbalizer(
    path: Option<&Path>,
    mode: VerbalizerMode,
) -> Result<Verbalizer> {
    match path {
        Some(p) => formats::load_verbalizer(p, mode),
        None => Ok(match mode {
            VerbalizerMode::Single => defaults::single_verbalizer(),
            VerbalizerMode::Multi => defaults::multi_verbalizer(),
        }),
    }
}

pub(crate) fn resolve_template(path: Option<&Path>) -> Result<Template> {
    match path {
        Some(p) => formats::load_template(p),
        None => Ok(defaults::manual_template()),
    }
}

/// Record the four files of a model bundle as manifest inputs.
pub(crate) fn record_bundle_inputs(
    manifest: &mut crate::manifest::RunManifest,
    dir: &Path,
) -> Result<()> {
    use crate::bundle::{BUNDLE_MANIFEST_FILE, SCORER_FILE, TEMPLATE_FILE, VERBALIZER_FILE};
    for file in [SCORER_FILE, TEMPLATE_FILE, VERBALIZER_FILE, BUNDLE_MANIFEST_FILE] {
        manifest.record_input(&dir.join(file))?;
    }
    Ok(())
}

/// Split off the pre-cutoff pool; `None` keeps the whole corpus as the pool.
pub(crate) fn training_pool(corpus: &Corpus, cutoff: Option<IsoDate>) -> Corpus {
    match cutoff {
        Some(date) => {
            let (pool, test) = chronological_split(corpus, date);
            if pool.is_empty() {
                eprintln!("warning: no reports dated on or before {date}");
            }
            if test.is_empty() {
                eprintln!("warning: no reports dated after {date}");
            }
            pool
        }
        None => corpus.clone(),
    }
}

/// The evaluation side of a split; `None` keeps the whole corpus.
pub(crate) fn test_side(corpus: &Corpus, cutoff: Option<IsoDate>) -> Corpus {
    match cutoff {
        Some(date) => {
            let (_, test) = chronological_split(corpus, date);
            test
        }
        None => corpus.clone(),
    }
}

// --- one training run -----------------------------------------------------

pub(crate) struct Fit {
    pub model: PromptModel<ToyMlm>,
    pub config: TrainConfig,
    pub report: TrainReport,
    pub grid_runs: Option<Vec<GridRun>>,
}

/// Train on `train_set`, either searching `grid` or using the fixed
/// configuration with threshold `tau`. Initialization and batch order both
/// derive from `seed`.
pub(crate) fn fit(
    train_set: &Corpus,
    verbalizer: &Verbalizer,
    template: &Template,
    vocab: &Vocabulary,
    scorer: ToyMlmConfig,
    grid: Option<&GridSpec>,
    fixed: &TrainConfig,
    tau: f64,
    seed: u64,
) -> Result<Fit> {
    verbalizer
        .check_alignment(train_set.categories())
        .context("verbalizer does not match the corpus categories")?;
    match grid {
        Some(spec) => {
            let factory = || {
                let scorer = ToyMlm::new(scorer, vocab.len(), seed)?;
                PromptModel::new(
                    vocab.clone(),
                    scorer,
                    template.clone(),
                    verbalizer.clone(),
                    0.5,
                )
            };
            let outcome = grid_search(train_set, spec, seed, factory)
                .context("hyperparameter search failed")?;
            Ok(Fit {
                model: outcome.model,
                config: outcome.config,
                report: outcome.report,
                grid_runs: Some(outcome.runs),
            })
        }
        None => {
            let scorer = ToyMlm::new(scorer, vocab.len(), seed).context("initializing scorer")?;
            let mut model = PromptModel::new(
                vocab.clone(),
                scorer,
                template.clone(),
                verbalizer.clone(),
                tau,
            )
            .context("assembling model")?;
            let report = model.train(train_set, fixed).context("training failed")?;
            Ok(Fit {
                model,
                config: fixed.clone(),
                report,
                grid_runs: None,
            })
        }
    }
}

/// Compact run descriptor used in the `config` column of results files.
pub(crate) fn config_label(config: &TrainConfig, tau: f64, mode: &str) -> String {
    format!(
        "lr={} batch={} warmup={} epochs={} tau={} mode={mode}",
        config.learning_rate, config.batch_size, config.warmup_ratio, config.epochs, tau
    )
}

// --- metrics and result files ---------------------------------------------

pub(crate) fn metric_key(category: &Category) -> String {
    format!("f1_{}", category.short_name)
}

/// Per-category and averaged F1 (percent) under the standard metric names.
pub(crate) fn metrics_map(categories: &[Category], f1: &F1Report) -> BTreeMap<String, f64> {
    let mut map = BTreeMap::new();
    for (category, &value) in categories.iter().zip(&f1.per_category) {
        map.insert(metric_key(category), value);
    }
    map.insert("macro_f1".to_string(), f1.macro_f1);
    map.insert("micro_f1".to_string(), f1.micro_f1);
    map
}

/// Build a CSV in memory and write it atomically.
pub(crate) fn write_csv<F>(path: &Path, build: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut writer = csv::Writer::from_writer(Vec::new());
    build(&mut writer)?;
    let bytes = writer
        .into_inner()
        .map_err(|e| anyhow::anyhow!("finishing {}: {e}", path.display()))?;
    write_atomic(path, &bytes)
}

pub(crate) struct ResultRow {
    pub size: Option<String>,
    pub seed: u64,
    pub config: String,
    pub f1: F1Report,
}

/// One row per run: seed, configuration, per-category F1, macro, micro.
/// Sweeps prepend a `size` column.
pub(crate) fn write_results_csv(
    path: &Path,
    categories: &[Category],
    with_size: bool,
    rows: &[ResultRow],
) -> Result<()> {
    write_csv(path, |w| {
        let mut header = Vec::new();
        if with_size {
            header.push("size".to_string());
        }
        header.push("seed".to_string());
        header.push("config".to_string());
        header.extend(categories.iter().map(metric_key));
        header.push("macro_f1".to_string());
        header.push("micro_f1".to_string());
        w.write_record(&header)?;
        for row in rows {
            let mut record = Vec::new();
            if with_size {
                record.push(row.size.clone().unwrap_or_default());
            }
            record.push(row.seed.to_string());
            record.push(row.config.clone());
            record.extend(row.f1.per_category.iter().map(|v| v.to_string()));
            record.push(row.f1.macro_f1.to_string());
            record.push(row.f1.micro_f1.to_string());
            w.write_record(&record)?;
        }
        Ok(())
    })
}

/// Predicted and gold labels side by side, one row per report.
pub(crate) fn write_predictions_csv(
    path: &Path,
    corpus: &Corpus,
    preds: &[Vec<u8>],
) -> Result<()> {
    write_csv(path, |w| {
        let mut header = vec!["id".to_string(), "date".to_string()];
        for category in corpus.categories() {
            header.push(format!("pred_{}", category.short_name));
        }
        for category in corpus.categories() {
            header.push(format!("gold_{}", category.short_name));
        }
        w.write_record(&header)?;
        for (report, pred) in corpus.reports().iter().zip(preds) {
            let mut record = vec![report.id.clone(), report.date.to_string()];
            record.extend(pred.iter().map(|p| p.to_string()));
            record.extend(report.gold.iter().map(|g| g.to_string()));
            w.write_record(&record)?;
        }
        Ok(())
    })
}

#[derive(Debug, Serialize)]
pub(crate) struct StatsOut {
    pub mean: f64,
    pub std_dev: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub(crate) struct FailureOut {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Serialize)]
pub(crate) struct SummaryOut {
    pub metrics: BTreeMap<String, StatsOut>,
    pub failures: Vec<FailureOut>,
}

pub(crate) fn summary_from(summary: &MultiRunSummary) -> SummaryOut {
    SummaryOut {
        metrics: summary
            .metrics
            .iter()
            .map(|(key, stats)| {
                (
                    key.clone(),
                    StatsOut {
                        mean: stats.mean,
                        std_dev: stats.std_dev,
                        values: stats.values.clone(),
                    },
                )
            })
            .collect(),
        failures: summary
            .failures
            .iter()
            .map(|(seed, error)| FailureOut {
                seed: *seed,
                error: error.clone(),
            })
            .collect(),
    }
}

/// Degenerate single-run summary: each metric's mean is its one value.
pub(crate) fn single_run_summary(metrics: &BTreeMap<String, f64>) -> SummaryOut {
    SummaryOut {
        metrics: metrics
            .iter()
            .map(|(key, &value)| {
                (
                    key.clone(),
                    StatsOut {
                        mean: value,
                        std_dev: 0.0,
                        values: vec![value],
                    },
                )
            })
            .collect(),
        failures: Vec::new(),
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Loss-trace CSV with columns `step,loss`.
pub(crate) fn write_trace_csv(path: &Path, report: &TrainReport) -> Result<()> {
    write_csv(path, |w| {
        w.write_record(["step", "loss"])?;
        for point in &report.trace {
            w.write_record(&[point.step.to_string(), point.loss.to_string()])?;
        }
        Ok(())
    })
}

/// Grid-search log: one row per configuration tried.
pub(crate) fn write_grid_runs_csv(path: &Path, runs: &[GridRun]) -> Result<()> {
    write_csv(path, |w| {
        w.write_record([
            "learning_rate",
            "batch_size",
            "warmup_ratio",
            "epochs",
            "final_loss",
            "error",
        ])?;
        for run in runs {
            w.write_record(&[
                run.config.learning_rate.to_string(),
                run.config.batch_size.to_string(),
                run.config.warmup_ratio.to_string(),
                run.config.epochs.to_string(),
                run.final_loss.map(|l| l.to_string()).unwrap_or_default(),
                run.error.clone().unwrap_or_default(),
            ])?;
        }
        Ok(())
    })
}

/// Predict every report with a fallible labeler, keeping corpus order.
pub(crate) fn predict_all<F>(corpus: &Corpus, mut labeler: F) -> Result<Vec<Vec<u8>>>
where
    F: FnMut(&radlabel_core::corpus::Report) -> Result<Vec<u8>>,
{
    let mut preds = Vec::with_capacity(corpus.len());
    for report in corpus.reports() {
        let labels = labeler(report).with_context(|| format!("labeling report `{}`", report.id))?;
        if labels.len() != corpus.categories().len() {
            bail!(
                "labeler returned {} labels for report `{}`, expected {}",
                labels.len(),
                report.id,
                corpus.categories().len()
            );
        }
        preds.push(labels);
    }
    Ok(preds)
}

pub(crate) fn golds_of(corpus: &Corpus) -> Vec<Vec<u8>> {
    corpus.reports().iter().map(|r| r.gold.clone()).collect()
}
