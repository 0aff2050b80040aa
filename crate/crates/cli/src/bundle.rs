//! Model bundles: a directory holding everything needed to run a trained
//! labeler again.
//!
//! Layout: `scorer.json` (shape, vocabulary, and the flat parameter vector),
//! `template.json`, `verbalizer.json`, and `manifest.json` carrying the
//! decision threshold, the training configuration, and the seed. Parameters
//! are stored as JSON numbers in shortest round-trip form, so a save/load
//! cycle reproduces every `f64` bit for bit.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use radlabel_core::labeler::{PromptModel, TrainConfig};
use radlabel_core::scorer::{ToyMlm, ToyMlmConfig};
use radlabel_core::template::Template;
use radlabel_core::verbalizer::Verbalizer;
use radlabel_core::vocab::Vocabulary;

use crate::artifact::{read_to_string, write_atomic};
use crate::formats::{self, parse_mode};

pub const SCORER_FILE: &str = "scorer.json";
pub const TEMPLATE_FILE: &str = "template.json";
pub const VERBALIZER_FILE: &str = "verbalizer.json";
pub const BUNDLE_MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct ScorerFile {
    config: ScorerConfigFile,
    vocab: Vec<String>,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScorerConfigFile {
    dim: usize,
    max_len: usize,
    init_scale: f64,
}

/// The searched-or-fixed settings the bundle was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub verbalizer_mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub tau: f64,
    pub config: BundleConfig,
    pub seed: u64,
}

impl BundleManifest {
    pub fn from_training(config: &TrainConfig, tau: f64, mode: &str) -> Self {
        Self {
            tau,
            config: BundleConfig {
                learning_rate: config.learning_rate,
                batch_size: config.batch_size,
                warmup_ratio: config.warmup_ratio,
                epochs: config.epochs,
                verbalizer_mode: mode.to_string(),
            },
            seed: config.seed,
        }
    }
}

/// Write the four bundle files; returns their paths for the run manifest.
pub fn save_bundle(
    dir: &Path,
    model: &PromptModel<ToyMlm>,
    manifest: &BundleManifest,
) -> Result<Vec<PathBuf>> {
    if let Some(bad) = model.scorer().params().iter().find(|p| !p.is_finite()) {
        bail!("refusing to save: model parameters contain non-finite value {bad}");
    }
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let scorer = model.scorer();
    let scorer_file = ScorerFile {
        config: ScorerConfigFile {
            dim: scorer.config().dim,
            max_len: scorer.config().max_len,
            init_scale: scorer.config().init_scale,
        },
        vocab: model.vocab().tokens().to_vec(),
        params: scorer.params().to_vec(),
    };
    let scorer_path = dir.join(SCORER_FILE);
    let mut bytes = serde_json::to_vec(&scorer_file)?;
    bytes.push(b'\n');
    write_atomic(&scorer_path, &bytes)?;

    let template_path = dir.join(TEMPLATE_FILE);
    formats::save_template(model.template(), &template_path)?;
    let verbalizer_path = dir.join(VERBALIZER_FILE);
    formats::save_verbalizer(model.verbalizer(), &verbalizer_path)?;

    let manifest_path = dir.join(BUNDLE_MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    write_atomic(&manifest_path, &bytes)?;

    Ok(vec![scorer_path, template_path, verbalizer_path, manifest_path])
}

pub fn load_bundle(dir: &Path) -> Result<(PromptModel<ToyMlm>, BundleManifest)> {
    let manifest: BundleManifest =
        serde_json::from_str(&read_to_string(&dir.join(BUNDLE_MANIFEST_FILE))?)
            .with_context(|| format!("bundle manifest in {}", dir.display()))?;
    let scorer_file: ScorerFile = serde_json::from_str(&read_to_string(&dir.join(SCORER_FILE))?)
        .with_context(|| format!("scorer checkpoint in {}", dir.display()))?;

    let vocab = Vocabulary::from_tokens(scorer_file.vocab)
        .with_context(|| format!("scorer checkpoint in {}", dir.display()))?;
    let config = ToyMlmConfig {
        dim: scorer_file.config.dim,
        max_len: scorer_file.config.max_len,
        init_scale: scorer_file.config.init_scale,
    };
    let scorer = ToyMlm::from_parts(config, vocab.len(), scorer_file.params)
        .with_context(|| format!("scorer checkpoint in {}", dir.display()))?;

    let template: Template = formats::load_template(&dir.join(TEMPLATE_FILE))?;
    let mode = parse_mode(&manifest.config.verbalizer_mode)
        .with_context(|| format!("bundle manifest in {}", dir.display()))?;
    let verbalizer: Verbalizer = formats::load_verbalizer(&dir.join(VERBALIZER_FILE), mode)?;

    let model = PromptModel::new(vocab, scorer, template, verbalizer, manifest.tau)
        .with_context(|| format!("assembling bundle from {}", dir.display()))?;
    Ok((model, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use radlabel_core::defaults;
    use radlabel_core::labeler::training_vocabulary;
    use radlabel_core::synth::generate_synthetic_corpus;

    fn trained_model() -> (PromptModel<ToyMlm>, TrainConfig) {
        let mut spec = defaults::default_synth_spec();
        spec.size = 24;
        let corpus = generate_synthetic_corpus(&spec, 3).unwrap();
        let verbalizer = defaults::multi_verbalizer();
        let template = defaults::manual_template();
        let vocab =
            training_vocabulary(&corpus, &verbalizer, std::slice::from_ref(&template)).unwrap();
        let scorer = ToyMlm::new(ToyMlmConfig::with_dim(8), vocab.len(), 5).unwrap();
        let mut model = PromptModel::new(vocab, scorer, template, verbalizer, 0.4).unwrap();
        let config = TrainConfig {
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        };
        model.train(&corpus, &config).unwrap();
        (model, config)
    }

    #[test]
    fn bundle_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (model, config) = trained_model();
        let manifest = BundleManifest::from_training(&config, model.tau(), "multi");
        save_bundle(dir.path(), &model, &manifest).unwrap();

        let (back, back_manifest) = load_bundle(dir.path()).unwrap();
        assert_eq!(back_manifest, manifest);
        assert_eq!(back.tau(), model.tau());
        assert_eq!(back.vocab().tokens(), model.vocab().tokens());
        assert_eq!(back.template(), model.template());
        assert_eq!(back.verbalizer(), model.verbalizer());
        let a: Vec<u64> = model.scorer().params().iter().map(|p| p.to_bits()).collect();
        let b: Vec<u64> = back.scorer().params().iter().map(|p| p.to_bits()).collect();
        assert_eq!(a, b, "checkpointed parameters must round-trip bit for bit");

        let text = "no cyst in the liver.";
        assert_eq!(back.predict(text).unwrap(), model.predict(text).unwrap());
    }

    #[test]
    fn missing_bundle_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_bundle(&dir.path().join("absent")).unwrap_err();
        let shown = format!("{err:#}");
        assert!(shown.contains("manifest.json"), "{shown}");
    }

    #[test]
    fn non_finite_parameters_are_rejected_at_save() {
        let dir = tempfile::tempdir().unwrap();
        let (model, config) = trained_model();
        let mut scorer = ToyMlm::new(*model.scorer().config(), model.vocab().len(), 9).unwrap();
        scorer.params_mut()[0] = f64::NAN;
        let poisoned = PromptModel::new(
            model.vocab().clone(),
            scorer,
            model.template().clone(),
            model.verbalizer().clone(),
            0.4,
        )
        .unwrap();
        let manifest = BundleManifest::from_training(&config, poisoned.tau(), "multi");
        let err = save_bundle(dir.path(), &poisoned, &manifest).unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
    }
}
