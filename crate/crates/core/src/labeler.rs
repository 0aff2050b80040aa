//! The prompt-tuned labeler: a template, a category answer map, and a
//! trainable scorer composed into a multi-label classifier, plus its
//! cross-entropy training loop, hyperparameter grid search, and
//! candidate-template selection.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::eval::{f1_scores, EvalError};
use crate::scorer::{MaskScorer, ScorerError, ToyMlm, ToyMlmConfig};
use crate::template::{CandidateSet, Rendered, Template, TemplateError};
use crate::verbalizer::{
    build_matrix, category_picks, MappingMatrix, Verbalizer, VerbalizerError,
};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabelerError {
    #[error("threshold {0} outside the open interval (0, 1)")]
    TauOutOfRange(f64),
    #[error("learning rate must be finite and non-negative, got {0}")]
    BadLearningRate(f64),
    #[error("batch size must be at least 1")]
    BadBatchSize,
    #[error("warmup ratio {0} outside [0, 1]")]
    BadWarmupRatio(f64),
    #[error("epoch count must be at least 1")]
    BadEpochs,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("probability vector length {pred} does not match label length {gold}")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("cannot take a loss over zero categories")]
    NoCategories,
    #[error("vocabulary has {vocab} tokens but the scorer expects {scorer}")]
    VocabSizeMismatch { vocab: usize, scorer: usize },
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("every run failed; first failure: {0}")]
    AllRunsFailed(String),
    #[error("grid has an empty {0} list")]
    EmptyGridAxis(&'static str),
    #[error("no candidate thresholds supplied")]
    NoThresholds,
    #[error("no candidate templates supplied")]
    NoCandidates,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Verbalizer(#[from] VerbalizerError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

const PROB_EPSILON: f64 = 1e-12;

/// Mean binary cross-entropy over categories. Probabilities outside
/// `[1e-12, 1 - 1e-12]` are clamped into it; the boolean reports whether any
/// clamping happened (a saturated scorer, worth surfacing to the caller).
pub fn bce_loss(probs: &[f64], golds: &[u8]) -> Result<(f64, bool), LabelerError> {
    if probs.len() != golds.len() {
        return Err(LabelerError::LengthMismatch {
            pred: probs.len(),
            gold: golds.len(),
        });
    }
    if probs.is_empty() {
        return Err(LabelerError::NoCategories);
    }
    let mut clamped = false;
    let mut total = 0.0;
    for (&p, &y) in probs.iter().zip(golds) {
        // probability assigned to the true outcome; clamping it is the same
        // as clamping p but avoids cancellation in 1 - (1 - eps)
        let toward_truth = if y == 1 { p } else { 1.0 - p };
        let toward_truth = if toward_truth < PROB_EPSILON {
            clamped = true;
            PROB_EPSILON
        } else if toward_truth > 1.0 - PROB_EPSILON {
            clamped = true;
            1.0 - PROB_EPSILON
        } else {
            toward_truth
        };
        total -= libm::log(toward_truth);
    }
    Ok((total / probs.len() as f64, clamped))
}

/// Binary labels from probabilities under one shared threshold.
pub fn labels_at(probs: &[f64], tau: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p > tau)).collect()
}

/// A cloze template, an answer-word map, and a mask scorer joined into a
/// multi-label classifier with a single decision threshold shared by all
/// categories.
#[derive(Debug, Clone)]
pub struct PromptModel<S = ToyMlm> {
    vocab: Vocabulary,
    scorer: S,
    template: Template,
    verbalizer: Verbalizer,
    matrix: MappingMatrix,
    tau: f64,
}

impl<S: MaskScorer> PromptModel<S> {
    pub fn new(
        vocab: Vocabulary,
        scorer: S,
        template: Template,
        verbalizer: Verbalizer,
        tau: f64,
    ) -> Result<Self, LabelerError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(LabelerError::TauOutOfRange(tau));
        }
        if vocab.len() != scorer.vocab_size() {
            return Err(LabelerError::VocabSizeMismatch {
                vocab: vocab.len(),
                scorer: scorer.vocab_size(),
            });
        }
        let matrix = build_matrix(&verbalizer, &vocab)?;
        Ok(Self {
            vocab,
            scorer,
            template,
            verbalizer,
            matrix,
            tau,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn scorer(&self) -> &S {
        &self.scorer
    }

    pub fn template(&self) -> &Template {
        &self.template
    }

    pub fn verbalizer(&self) -> &Verbalizer {
        &self.verbalizer
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn set_tau(&mut self, tau: f64) -> Result<(), LabelerError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(LabelerError::TauOutOfRange(tau));
        }
        self.tau = tau;
        Ok(())
    }

    fn render(&self, text: &str) -> Result<Rendered, LabelerError> {
        Ok(self.template.render(text, &self.vocab, self.scorer.max_len())?)
    }

    /// Per-category mask logits: for each category, the best logit among its
    /// answer words.
    pub fn predict_logits(&self, text: &str) -> Result<Vec<f64>, LabelerError> {
        let rendered = self.render(text)?;
        let logits = self.scorer.forward(&rendered.tokens, rendered.mask_pos)?;
        Ok(category_picks(&logits, &self.matrix)
            .into_iter()
            .map(|(z, _)| z)
            .collect())
    }

    pub fn predict_proba(&self, text: &str) -> Result<Vec<f64>, LabelerError> {
        Ok(self.predict_logits(text)?.into_iter().map(sigmoid).collect())
    }

    /// 1 wherever the category probability exceeds the threshold.
    pub fn predict(&self, text: &str) -> Result<Vec<u8>, LabelerError> {
        Ok(labels_at(&self.predict_proba(text)?, self.tau))
    }
}

/// Settings for one training run.
///
/// A zero learning rate is accepted so a run can be dry-ridden as a no-op
/// diagnostic; every update then leaves the parameters bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Fraction of total steps spent ramping the rate up linearly from zero.
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 4,
            warmup_ratio: 0.1,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LabelerError> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(LabelerError::BadLearningRate(self.learning_rate));
        }
        if self.batch_size == 0 {
            return Err(LabelerError::BadBatchSize);
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(LabelerError::BadWarmupRatio(self.warmup_ratio));
        }
        if self.epochs == 0 {
            return Err(LabelerError::BadEpochs);
        }
        Ok(())
    }
}

/// One optimizer step: the mean loss over its mini-batch. Steps are 1-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
}

/// What a training run produced besides the updated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TracePoint>,
    pub steps_per_epoch: usize,
    pub warmup_steps: usize,
    /// Examples whose probabilities saturated and were clamped in the loss.
    pub clamped_examples: usize,
}

impl TrainReport {
    pub fn first_epoch_mean(&self) -> f64 {
        mean_loss(&self.trace[..self.steps_per_epoch])
    }

    pub fn final_epoch_mean(&self) -> f64 {
        mean_loss(&self.trace[self.trace.len() - self.steps_per_epoch..])
    }
}

fn mean_loss(points: &[TracePoint]) -> f64 {
    points.iter().map(|p| p.loss).sum::<f64>() / points.len() as f64
}

const BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;
const WEIGHT_DECAY: f64 = 0.01;

/// Adaptive-moment update with decoupled weight decay and no first-moment
/// averaging: v ← β₂v + (1−β₂)g², p ← p − lr·(g/(√v̂ + ε) + 0.01·p).
struct Moments {
    v: Vec<f64>,
    step: usize,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let correction = 1.0 - libm::pow(BETA2, self.step as f64);
        for ((p, &g), v) in params.iter_mut().zip(grad).zip(&mut self.v) {
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let v_hat = *v / correction;
            *p -= lr * (g / (libm::sqrt(v_hat) + ADAM_EPSILON) + WEIGHT_DECAY * *p);
        }
    }
}

impl PromptModel<ToyMlm> {
    /// Minimize mean cross-entropy over seeded shuffled mini-batches.
    ///
    /// The rate ramps linearly for `round(warmup_ratio · total_steps)` steps,
    /// then stays constant. Identical model, corpus, and config give
    /// bit-identical parameters back.
    pub fn train(
        &mut self,
        train_set: &Corpus,
        config: &TrainConfig,
    ) -> Result<TrainReport, LabelerError> {
        config.validate()?;
        let reports = train_set.reports();
        if reports.is_empty() {
            return Err(LabelerError::EmptyTrainSet);
        }
        self.verbalizer.check_alignment(train_set.categories())?;
        let n_categories = train_set.categories().len() as f64;

        let mut inputs = Vec::with_capacity(reports.len());
        for report in reports {
            inputs.push((self.render(&report.text)?, report.gold.as_slice()));
        }

        let steps_per_epoch = reports.len().div_ceil(config.batch_size);
        let total_steps = steps_per_epoch * config.epochs;
        let warmup_steps = libm::round(config.warmup_ratio * total_steps as f64) as usize;

        let vocab_size = self.scorer.vocab_size();
        let mut moments = Moments::new(self.scorer.params().len());
        let mut trace = Vec::with_capacity(total_steps);
        let mut clamped_examples = 0usize;
        let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
        let mut order: Vec<usize> = (0..reports.len()).collect();

        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size) {
                let step = moments.step + 1;
                let mut grad = vec![0.0; self.scorer.params().len()];
                let mut batch_loss = 0.0;
                let example_weight = 1.0 / chunk.len() as f64;
                for &i in chunk {
                    let (rendered, gold) = &inputs[i];
                    let logits = self.scorer.forward(&rendered.tokens, rendered.mask_pos)?;
                    let picks = category_picks(&logits, &self.matrix);
                    let probs: Vec<f64> = picks.iter().map(|&(z, _)| sigmoid(z)).collect();
                    let (loss, clamped) = bce_loss(&probs, gold)?;
                    batch_loss += loss;
                    clamped_examples += usize::from(clamped);
                    // d(batch loss)/dz_i routed onto the winning answer word;
                    // += because categories may share one
                    let mut dlogits = vec![0.0; vocab_size];
                    for ((&(_, id), &p), &y) in picks.iter().zip(&probs).zip(gold.iter()) {
                        dlogits[id as usize] += (p - f64::from(y)) / n_categories * example_weight;
                    }
                    self.scorer
                        .backward(&rendered.tokens, rendered.mask_pos, &dlogits, &mut grad)?;
                }
                batch_loss *= example_weight;
                if !batch_loss.is_finite() {
                    return Err(LabelerError::NonFiniteLoss { step });
                }
                let ramp = if warmup_steps > 0 && step <= warmup_steps {
                    step as f64 / warmup_steps as f64
                } else {
                    1.0
                };
                moments.apply(
                    self.scorer.params_mut(),
                    &grad,
                    config.learning_rate * ramp,
                );
                trace.push(TracePoint {
                    step,
                    loss: batch_loss,
                });
            }
        }
        Ok(TrainReport {
            trace,
            steps_per_epoch,
            warmup_steps,
            clamped_examples,
        })
    }
}

/// Pick the threshold with the best macro F1 on `corpus` and set it on the
/// model. Ties go to the largest threshold: when a trained model separates the
/// training set perfectly every candidate scores alike, and the strictest cut
/// carries the least false-positive risk on unseen reports. Returns the
/// threshold and its F1.
pub fn select_threshold<S: MaskScorer>(
    model: &mut PromptModel<S>,
    corpus: &Corpus,
    taus: &[f64],
) -> Result<(f64, f64), LabelerError> {
    if taus.is_empty() {
        return Err(LabelerError::NoThresholds);
    }
    let mut probs = Vec::with_capacity(corpus.reports().len());
    for report in corpus.reports() {
        probs.push(model.predict_proba(&report.text)?);
    }
    let golds: Vec<Vec<u8>> = corpus.reports().iter().map(|r| r.gold.clone()).collect();
    let mut best_tau = taus[0];
    let mut best_f1 = f64::NEG_INFINITY;
    for &tau in taus {
        let preds: Vec<Vec<u8>> = probs.iter().map(|p| labels_at(p, tau)).collect();
        let f1 = f1_scores(&preds, &golds)?.macro_f1;
        if f1 >= best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    model.set_tau(best_tau)?;
    Ok((best_tau, best_f1))
}

/// Candidate values for the searched training settings and the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub warmup_ratios: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// Epochs per grid point (not searched over).
    pub epochs: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![2e-5, 3e-5, 5e-5],
            batch_sizes: vec![2, 4, 8],
            warmup_ratios: vec![0.0, 0.1],
            thresholds: vec![0.2, 0.3, 0.4, 0.5],
            epochs: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), LabelerError> {
        if self.learning_rates.is_empty() {
            return Err(LabelerError::EmptyGridAxis("learning rate"));
        }
        if self.batch_sizes.is_empty() {
            return Err(LabelerError::EmptyGridAxis("batch size"));
        }
        if self.warmup_ratios.is_empty() {
            return Err(LabelerError::EmptyGridAxis("warmup ratio"));
        }
        if self.thresholds.is_empty() {
            return Err(LabelerError::EmptyGridAxis("threshold"));
        }
        if self.epochs == 0 {
            return Err(LabelerError::BadEpochs);
        }
        Ok(())
    }
}

/// One grid point's result; exactly one of `final_loss` and `error` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub config: TrainConfig,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub model: PromptModel<ToyMlm>,
    pub config: TrainConfig,
    pub report: TrainReport,
    pub train_macro_f1: f64,
    pub runs: Vec<GridRun>,
}

/// Train one fresh model per (rate, batch, warmup) tuple, keep the one with
/// the lowest final-epoch mean loss (earlier tuples win ties), then choose
/// its threshold by training-set macro F1. No held-out data is consulted.
pub fn grid_search<F>(
    train_set: &Corpus,
    grid: &GridSpec,
    seed: u64,
    factory: F,
) -> Result<GridOutcome, LabelerError>
where
    F: Fn() -> Result<PromptModel<ToyMlm>, LabelerError>,
{
    grid.validate()?;
    let mut runs = Vec::new();
    let mut best: Option<(f64, PromptModel<ToyMlm>, TrainConfig, TrainReport)> = None;
    for &learning_rate in &grid.learning_rates {
        for &batch_size in &grid.batch_sizes {
            for &warmup_ratio in &grid.warmup_ratios {
                let config = TrainConfig {
                    learning_rate,
                    batch_size,
                    warmup_ratio,
                    epochs: grid.epochs,
                    seed,
                };
                let mut model = factory()?;
                match model.train(train_set, &config) {
                    Ok(report) => {
                        let final_loss = report.final_epoch_mean();
                        runs.push(GridRun {
                            config: config.clone(),
                            final_loss: Some(final_loss),
                            error: None,
                        });
                        if best.as_ref().map_or(true, |(loss, ..)| final_loss < *loss) {
                            best = Some((final_loss, model, config, report));
                        }
                    }
                    Err(e) => runs.push(GridRun {
                        config,
                        final_loss: None,
                        error: Some(e.to_string()),
                    }),
                }
            }
        }
    }
    let Some((_, mut model, config, report)) = best else {
        let first = runs.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(LabelerError::AllRunsFailed(first));
    };
    let (_, train_macro_f1) = select_threshold(&mut model, train_set, &grid.thresholds)?;
    Ok(GridOutcome {
        model,
        config,
        report,
        train_macro_f1,
        runs,
    })
}

/// Vocabulary for a training run: corpus tokens plus answer words plus the
/// scaffold words of every template under consideration, so that candidate
/// trials and later checkpoint reloads all share one id space.
pub fn training_vocabulary<'a, T>(
    train: &Corpus,
    verbalizer: &Verbalizer,
    templates: T,
) -> Result<Vocabulary, VocabError>
where
    T: IntoIterator<Item = &'a Template>,
{
    let mut extras: Vec<String> = verbalizer.words().map(ToString::to_string).collect();
    for template in templates {
        extras.extend(template.scaffold_words());
    }
    Vocabulary::build(
        train.reports().iter().map(|r| r.text.as_str()),
        extras.iter().map(String::as_str),
    )
}

/// How one candidate template fared during selection.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateOutcome {
    pub id: String,
    pub pattern: String,
    pub train_macro_f1: Option<f64>,
    pub final_loss: Option<f64>,
    pub tau: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TemplateSelection {
    /// The trained model for the winning candidate.
    pub model: PromptModel<ToyMlm>,
    /// Index of the winner within the candidate set.
    pub best_index: usize,
    pub outcomes: Vec<CandidateOutcome>,
}

/// Train one model per candidate template (same init seed, shared
/// vocabulary) and keep the highest training-set macro F1; ties go to the
/// lexicographically smaller pattern. Candidates that fail to train are
/// recorded and skipped.
pub fn select_best_template(
    candidates: &CandidateSet,
    train: &Corpus,
    verbalizer: &Verbalizer,
    scorer_config: ToyMlmConfig,
    train_config: &TrainConfig,
    thresholds: &[f64],
    init_seed: u64,
) -> Result<TemplateSelection, LabelerError> {
    if candidates.candidates.is_empty() {
        return Err(LabelerError::NoCandidates);
    }
    if thresholds.is_empty() {
        return Err(LabelerError::NoThresholds);
    }
    let vocab = training_vocabulary(train, verbalizer, &candidates.candidates)?;
    let mut outcomes = Vec::with_capacity(candidates.candidates.len());
    let mut best: Option<(f64, usize, PromptModel<ToyMlm>)> = None;
    for (index, template) in candidates.candidates.iter().enumerate() {
        let pattern = template.pattern();
        let trial = (|| -> Result<(PromptModel<ToyMlm>, f64, f64), LabelerError> {
            let scorer = ToyMlm::new(scorer_config, vocab.len(), init_seed)?;
            let mut model = PromptModel::new(
                vocab.clone(),
                scorer,
                template.clone(),
                verbalizer.clone(),
                0.5,
            )?;
            let report = model.train(train, train_config)?;
            let final_loss = report.final_epoch_mean();
            let (_, f1) = select_threshold(&mut model, train, thresholds)?;
            Ok((model, f1, final_loss))
        })();
        match trial {
            Ok((model, f1, final_loss)) => {
                outcomes.push(CandidateOutcome {
                    id: template.id().to_string(),
                    pattern: pattern.clone(),
                    train_macro_f1: Some(f1),
                    final_loss: Some(final_loss),
                    tau: Some(model.tau()),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((best_f1, best_index, _)) => {
                        f1 > *best_f1
                            || (f1 == *best_f1
                                && pattern < candidates.candidates[*best_index].pattern())
                    }
                };
                if better {
                    best = Some((f1, index, model));
                }
            }
            Err(e) => outcomes.push(CandidateOutcome {
                id: template.id().to_string(),
                pattern,
                train_macro_f1: None,
                final_loss: None,
                tau: None,
                error: Some(e.to_string()),
            }),
        }
    }
    match best {
        Some((_, best_index, model)) => Ok(TemplateSelection {
            model,
            best_index,
            outcomes,
        }),
        None => {
            let first = outcomes
                .iter()
                .find_map(|o| o.error.clone())
                .unwrap_or_default();
            Err(LabelerError::AllRunsFailed(first))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Category, Report};
    use crate::corpus::stratified_kshot;
    use crate::scorer::grad_check;
    use crate::template::TemplateFormat;
    use crate::verbalizer::VerbalizerMode;
    use alloc::format;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_matches_reference_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(2.0) - 0.8807970779778823).abs() < 1e-15);
        assert!((sigmoid(-2.0) - 0.11920292202211755).abs() < 1e-15);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-745.0) > 0.0);
    }

    #[test]
    fn bce_agrees_with_hand_values() {
        let (half, clamped) = bce_loss(&[0.5, 0.5, 0.5], &[1, 0, 1]).unwrap();
        assert!((half - 0.6931471805599453).abs() < 1e-15);
        assert!(!clamped);

        let (point_nine, _) = bce_loss(&[0.9], &[1]).unwrap();
        assert!((point_nine - 0.10536051565782628).abs() < 1e-15);

        // same distance from the truth on either side
        let (a, _) = bce_loss(&[0.73], &[1]).unwrap();
        let (b, _) = bce_loss(&[0.27], &[0]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn saturated_probabilities_clamp_and_flag() {
        let (loss, clamped) = bce_loss(&[1.0], &[0]).unwrap();
        assert!(clamped);
        assert!((loss - 27.631021115928547).abs() < 1e-9);

        let (loss, clamped) = bce_loss(&[1.0], &[1]).unwrap();
        assert!(clamped);
        assert!(loss.abs() < 1e-11);

        let (loss, clamped) = bce_loss(&[0.0], &[1]).unwrap();
        assert!(clamped);
        assert!((loss - 27.631021115928547).abs() < 1e-9);
    }

    #[test]
    fn bce_rejects_bad_shapes() {
        assert!(matches!(
            bce_loss(&[0.5], &[1, 0]),
            Err(LabelerError::LengthMismatch { pred: 1, gold: 2 })
        ));
        assert!(matches!(bce_loss(&[], &[]), Err(LabelerError::NoCategories)));
    }

    #[test]
    fn loss_gradient_in_logits_is_prediction_error_over_n() {
        let z = [0.3, -1.2, 2.0];
        let y = [1u8, 0, 1];
        let loss_of = |z: &[f64]| {
            let probs: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
            bce_loss(&probs, &y).unwrap().0
        };
        let h = 1e-5;
        for i in 0..z.len() {
            let analytic = (sigmoid(z[i]) - f64::from(y[i])) / z.len() as f64;
            let mut plus = z;
            plus[i] += h;
            let mut minus = z;
            minus[i] -= h;
            let fd = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            assert!(
                (analytic - fd).abs() < 1e-6,
                "coordinate {i}: analytic {analytic} vs finite difference {fd}"
            );
        }
    }

    fn two_categories() -> Vec<Category> {
        vec![Category::new("Alpha"), Category::new("Beta")]
    }

    fn word_lists(entries: &[(&str, &[&str])]) -> Vec<(String, Vec<String>)> {
        entries
            .iter()
            .map(|(c, ws)| (c.to_string(), ws.iter().map(|w| w.to_string()).collect()))
            .collect()
    }

    fn two_word_verbalizer() -> Verbalizer {
        Verbalizer::from_word_lists(
            VerbalizerMode::Single,
            word_lists(&[("Alpha", &["alpha"]), ("Beta", &["beta"])]),
        )
        .unwrap()
    }

    fn plain_template() -> Template {
        Template::new(
            "t-main",
            TemplateFormat::ReportFirst,
            "the finding is",
            "",
            ".",
        )
        .unwrap()
    }

    /// Sixteen reports whose single content word decides the label.
    fn separable_corpus() -> Corpus {
        let fillers = ["scan shows", "impression notes", "study reveals", "exam finds"];
        let mut reports = Vec::new();
        for (i, filler) in fillers.iter().enumerate() {
            for (j, (word, gold)) in [("alpha", vec![1u8, 0]), ("beta", vec![0, 1])]
                .iter()
                .enumerate()
            {
                for copy in 0..2 {
                    reports.push(Report {
                        id: format!("r-{i}{j}{copy}"),
                        date: "2016-03-01".parse().unwrap(),
                        text: format!("{filler} {word} tissue."),
                        gold: gold.clone(),
                    });
                }
            }
        }
        Corpus::new(two_categories(), reports).unwrap()
    }

    fn fresh_model(dim: usize, seed: u64) -> PromptModel<ToyMlm> {
        let corpus = separable_corpus();
        let verbalizer = two_word_verbalizer();
        let template = plain_template();
        let vocab =
            training_vocabulary(&corpus, &verbalizer, core::iter::once(&template)).unwrap();
        let config = ToyMlmConfig {
            dim,
            max_len: 32,
            init_scale: 0.3,
        };
        let scorer = ToyMlm::new(config, vocab.len(), seed).unwrap();
        PromptModel::new(vocab, scorer, template, verbalizer, 0.5).unwrap()
    }

    #[test]
    fn all_zero_parameters_give_half_probability_everywhere() {
        let base = fresh_model(4, 0);
        let config = *base.scorer().config();
        let zeros = vec![0.0; base.scorer().params().len()];
        let scorer = ToyMlm::from_parts(config, base.vocab().len(), zeros).unwrap();
        let model = PromptModel::new(
            base.vocab().clone(),
            scorer,
            base.template().clone(),
            base.verbalizer().clone(),
            0.5,
        )
        .unwrap();
        let probs = model.predict_proba("scan shows alpha tissue.").unwrap();
        assert_eq!(probs, vec![0.5, 0.5]);
    }

    #[test]
    fn threshold_splits_probabilities() {
        assert_eq!(labels_at(&[0.6, 0.3], 0.5), vec![1, 0]);
        assert_eq!(labels_at(&[0.6, 0.3], 0.25), vec![1, 1]);
        // strict comparison: equality is negative
        assert_eq!(labels_at(&[0.5], 0.5), vec![0]);
    }

    #[test]
    fn invalid_threshold_rejected_everywhere() {
        let model = fresh_model(4, 0);
        for tau in [0.0, 1.0, -0.1, 1.5] {
            let mut m = model.clone();
            assert!(matches!(
                m.set_tau(tau),
                Err(LabelerError::TauOutOfRange(_))
            ));
        }
    }

    #[test]
    fn adding_a_synonym_never_lowers_a_probability() {
        let corpus = separable_corpus();
        let single = two_word_verbalizer();
        let multi = Verbalizer::from_word_lists(
            VerbalizerMode::Multi,
            word_lists(&[("Alpha", &["alpha", "tissue"]), ("Beta", &["beta"])]),
        )
        .unwrap();
        let template = plain_template();
        let vocab = training_vocabulary(&corpus, &multi, core::iter::once(&template)).unwrap();
        let scorer = ToyMlm::new(
            ToyMlmConfig {
                dim: 8,
                max_len: 32,
                init_scale: 0.5,
            },
            vocab.len(),
            7,
        )
        .unwrap();
        let narrow = PromptModel::new(
            vocab.clone(),
            scorer.clone(),
            template.clone(),
            single,
            0.5,
        )
        .unwrap();
        let wide = PromptModel::new(vocab, scorer, template, multi, 0.5).unwrap();
        for report in corpus.reports() {
            let a = narrow.predict_proba(&report.text).unwrap();
            let b = wide.predict_proba(&report.text).unwrap();
            assert!(b[0] >= a[0]);
            assert_eq!(a[1], b[1]);
        }
    }

    #[test]
    fn gradient_through_scorer_matches_finite_differences() {
        let model = fresh_model(6, 3);
        let rendered = model.render("impression notes beta tissue.").unwrap();
        let matrix = build_matrix(model.verbalizer(), model.vocab()).unwrap();
        let gold = [0u8, 1];
        let loss = move |logits: &[f64]| {
            let picks = category_picks(logits, &matrix);
            let probs: Vec<f64> = picks.iter().map(|&(z, _)| sigmoid(z)).collect();
            let (value, _) = bce_loss(&probs, &gold).unwrap();
            let mut dlogits = vec![0.0; logits.len()];
            for ((&(_, id), &p), &y) in picks.iter().zip(&probs).zip(gold.iter()) {
                dlogits[id as usize] += (p - f64::from(y)) / gold.len() as f64;
            }
            (value, dlogits)
        };
        let mut scorer = model.scorer().clone();
        let max_rel =
            grad_check(&mut scorer, &rendered.tokens, rendered.mask_pos, loss, 250, 11).unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let corpus = separable_corpus();
        let mut model = fresh_model(6, 5);
        let before = model.scorer().params().to_vec();
        let config = TrainConfig {
            learning_rate: 0.0,
            batch_size: corpus.reports().len(),
            warmup_ratio: 0.0,
            epochs: 2,
            seed: 9,
        };
        let report = model.train(&corpus, &config).unwrap();
        assert_eq!(model.scorer().params(), before.as_slice());
        assert_eq!(report.trace.len(), 2);
        // full-batch losses may differ only by summation order
        assert!((report.trace[0].loss - report.trace[1].loss).abs() < 1e-12);
    }

    #[test]
    fn training_reduces_loss_on_a_separable_set() {
        let corpus = separable_corpus();
        let mut model = fresh_model(12, 1);
        let config = TrainConfig {
            seed: 1,
            ..TrainConfig::default()
        };
        let report = model.train(&corpus, &config).unwrap();
        assert_eq!(report.steps_per_epoch, 4);
        assert_eq!(report.trace.len(), 80);
        assert_eq!(report.warmup_steps, 8);
        assert!(
            report.final_epoch_mean() < report.first_epoch_mean(),
            "final {} vs first {}",
            report.final_epoch_mean(),
            report.first_epoch_mean()
        );
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let corpus = separable_corpus();
        let config = TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        };
        let mut a = fresh_model(8, 2);
        let mut b = fresh_model(8, 2);
        let trace_a = a.train(&corpus, &config).unwrap();
        let trace_b = b.train(&corpus, &config).unwrap();
        assert_eq!(a.scorer().params(), b.scorer().params());
        assert_eq!(trace_a, trace_b);
        let text = &corpus.reports()[0].text;
        assert_eq!(a.predict(text).unwrap(), b.predict(text).unwrap());
    }

    #[test]
    fn runaway_learning_rate_aborts_with_an_error() {
        let corpus = separable_corpus();
        let mut model = fresh_model(6, 4);
        let config = TrainConfig {
            learning_rate: 1e8,
            batch_size: 4,
            warmup_ratio: 0.0,
            epochs: 40,
            seed: 0,
        };
        assert!(model.train(&corpus, &config).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        let cases = [
            TrainConfig { learning_rate: f64::NAN, ..ok.clone() },
            TrainConfig { learning_rate: -0.5, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { warmup_ratio: 1.5, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
        ];
        for bad in cases {
            assert!(bad.validate().is_err(), "{bad:?} should fail");
        }
    }

    #[test]
    fn kshot_sample_trains_without_error() {
        let pool = separable_corpus();
        let sample = stratified_kshot(&pool, 8, 0).unwrap();
        let mut model = fresh_model(8, 0);
        let config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        model.train(&sample.corpus, &config).unwrap();
    }

    #[test]
    fn default_grid_lists_match_protocol() {
        let grid = GridSpec::default();
        assert_eq!(grid.learning_rates, vec![2e-5, 3e-5, 5e-5]);
        assert_eq!(grid.batch_sizes, vec![2, 4, 8]);
        assert_eq!(grid.warmup_ratios, vec![0.0, 0.1]);
        assert_eq!(grid.thresholds, vec![0.2, 0.3, 0.4, 0.5]);
    }

    #[test]
    fn single_point_grid_returns_that_point() {
        let corpus = separable_corpus();
        let grid = GridSpec {
            learning_rates: vec![0.05],
            batch_sizes: vec![4],
            warmup_ratios: vec![0.0],
            thresholds: vec![0.3, 0.5],
            epochs: 5,
        };
        let outcome = grid_search(&corpus, &grid, 0, || Ok(fresh_model(8, 0))).unwrap();
        assert_eq!(outcome.config.learning_rate, 0.05);
        assert_eq!(outcome.config.batch_size, 4);
        assert_eq!(outcome.runs.len(), 1);
        assert!(grid.thresholds.contains(&outcome.model.tau()));
    }

    #[test]
    fn grid_prefers_the_run_that_stays_finite() {
        let corpus = separable_corpus();
        let grid = GridSpec {
            learning_rates: vec![1e8, 0.05],
            batch_sizes: vec![4],
            warmup_ratios: vec![0.0],
            thresholds: vec![0.5],
            epochs: 40,
        };
        let outcome = grid_search(&corpus, &grid, 0, || Ok(fresh_model(6, 4))).unwrap();
        assert_eq!(outcome.config.learning_rate, 0.05);
        assert_eq!(outcome.runs.len(), 2);
        assert!(outcome.runs[0].error.is_some());
        assert!(outcome.runs[1].final_loss.is_some());
    }

    #[test]
    fn empty_grid_axis_rejected() {
        let corpus = separable_corpus();
        let grid = GridSpec {
            learning_rates: vec![],
            ..GridSpec::default()
        };
        assert!(matches!(
            grid_search(&corpus, &grid, 0, || Ok(fresh_model(4, 0))),
            Err(LabelerError::EmptyGridAxis("learning rate"))
        ));
    }

    #[test]
    fn threshold_selection_is_stable_under_ties() {
        let corpus = separable_corpus();
        let base = fresh_model(4, 0);
        let zeros = vec![0.0; base.scorer().params().len()];
        let scorer =
            ToyMlm::from_parts(*base.scorer().config(), base.vocab().len(), zeros).unwrap();
        let mut model = PromptModel::new(
            base.vocab().clone(),
            scorer,
            base.template().clone(),
            base.verbalizer().clone(),
            0.5,
        )
        .unwrap();
        // every probability is 0.5, so all thresholds below 0.5 tie and the
        // largest one wins
        let (tau, _) = select_threshold(&mut model, &corpus, &[0.2, 0.3, 0.4]).unwrap();
        assert_eq!(tau, 0.4);
        assert_eq!(model.tau(), 0.4);
    }

    fn blind_template(max_len: usize) -> Template {
        // scaffold fills the whole window, so no report tokens survive
        let words = vec!["pad"; max_len - 3];
        Template::new(
            "t-blind",
            TemplateFormat::ReportFirst,
            &words.join(" "),
            "",
            "",
        )
        .unwrap()
    }

    #[test]
    fn template_selection_prefers_the_one_that_sees_the_report() {
        let corpus = separable_corpus();
        let verbalizer = two_word_verbalizer();
        let candidates = CandidateSet {
            candidates: vec![blind_template(32), plain_template()],
            scores: vec![0.0, 0.0],
        };
        let config = ToyMlmConfig {
            dim: 12,
            max_len: 32,
            init_scale: 0.3,
        };
        let selection = select_best_template(
            &candidates,
            &corpus,
            &verbalizer,
            config,
            &TrainConfig::default(),
            &[0.3, 0.5],
            1,
        )
        .unwrap();
        assert_eq!(selection.best_index, 1);
        assert_eq!(selection.model.template().id(), "t-main");
        assert_eq!(selection.outcomes.len(), 2);
        let blind_f1 = selection.outcomes[0].train_macro_f1.unwrap();
        let seeing_f1 = selection.outcomes[1].train_macro_f1.unwrap();
        assert!(
            seeing_f1 > blind_f1,
            "report-aware {seeing_f1} vs blind {blind_f1}"
        );
    }

    #[test]
    fn failed_candidates_are_recorded_and_skipped() {
        let corpus = separable_corpus();
        let verbalizer = two_word_verbalizer();
        // scaffold longer than the window: rendering fails for every report
        let oversized = blind_template(40);
        let candidates = CandidateSet {
            candidates: vec![oversized.clone(), plain_template()],
            scores: vec![0.0, 0.0],
        };
        let config = ToyMlmConfig {
            dim: 6,
            max_len: 32,
            init_scale: 0.3,
        };
        let train_config = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let selection = select_best_template(
            &candidates,
            &corpus,
            &verbalizer,
            config,
            &train_config,
            &[0.5],
            0,
        )
        .unwrap();
        assert_eq!(selection.best_index, 1);
        assert!(selection.outcomes[0].error.is_some());
        assert!(selection.outcomes[0].train_macro_f1.is_none());

        let all_bad = CandidateSet {
            candidates: vec![oversized],
            scores: vec![0.0],
        };
        assert!(matches!(
            select_best_template(
                &all_bad,
                &corpus,
                &verbalizer,
                config,
                &train_config,
                &[0.5],
                0
            ),
            Err(LabelerError::AllRunsFailed(_))
        ));
    }

    #[test]
    fn single_candidate_selection_returns_it() {
        let corpus = separable_corpus();
        let verbalizer = two_word_verbalizer();
        let candidates = CandidateSet {
            candidates: vec![plain_template()],
            scores: vec![0.0],
        };
        let config = ToyMlmConfig {
            dim: 6,
            max_len: 32,
            init_scale: 0.3,
        };
        let train_config = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let selection = select_best_template(
            &candidates,
            &corpus,
            &verbalizer,
            config,
            &train_config,
            &[0.5],
            0,
        )
        .unwrap();
        assert_eq!(selection.best_index, 0);
        assert_eq!(selection.outcomes.len(), 1);
    }

    #[test]
    fn shared_vocabulary_covers_scaffolds_and_answers() {
        let corpus = separable_corpus();
        let verbalizer = two_word_verbalizer();
        let templates = [plain_template(), blind_template(32)];
        let vocab = training_vocabulary(&corpus, &verbalizer, templates.iter()).unwrap();
        for word in ["alpha", "beta", "finding", "pad"] {
            assert!(vocab.known_single_token(word).is_ok(), "missing {word}");
        }
    }

    proptest! {
        #[test]
        fn raising_the_threshold_only_removes_positives(
            probs in proptest::collection::vec(0.0f64..1.0, 1..10),
            lo in 0.05f64..0.9,
            delta in 0.0f64..0.09,
        ) {
            let hi = lo + delta;
            let loose = labels_at(&probs, lo);
            let tight = labels_at(&probs, hi);
            for (l, t) in loose.iter().zip(&tight) {
                prop_assert!(t <= l);
            }
        }
    }
}
