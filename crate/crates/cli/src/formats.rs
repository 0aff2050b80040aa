//! File codecs for every artifact the tool reads or writes.
//!
//! Corpora are JSON lines: a header object declaring the category order,
//! then one object per report. Everything else — world descriptions,
//! verbalizers, templates, lexicons, cue lists, recorded chat fixtures,
//! and hyperparameter grids — is a single JSON document.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use radlabel_core::baselines::{MentionLexicon, NegationCueSet};
use radlabel_core::corpus::{Category, Corpus, Report};
use radlabel_core::date::IsoDate;
use radlabel_core::labeler::GridSpec;
use radlabel_core::synth::{CategoryPatterns, SynthSpec};
use radlabel_core::template::{Template, TemplateFormat};
use radlabel_core::verbalizer::{Verbalizer, VerbalizerMode};

use crate::artifact::{read_to_string, write_atomic};

pub fn parse_date(s: &str) -> Result<IsoDate> {
    s.trim()
        .parse::<IsoDate>()
        .map_err(|e| anyhow!("invalid date `{s}`: {e}"))
}

pub fn parse_mode(s: &str) -> Result<VerbalizerMode> {
    match s.trim().to_lowercase().as_str() {
        "single" => Ok(VerbalizerMode::Single),
        "multi" => Ok(VerbalizerMode::Multi),
        other => bail!("invalid verbalizer mode `{other}` (expected `single` or `multi`)"),
    }
}

pub fn mode_name(mode: VerbalizerMode) -> &'static str {
    match mode {
        VerbalizerMode::Single => "single",
        VerbalizerMode::Multi => "multi",
    }
}

fn pretty(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

// --- corpus ---------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusHeader {
    categories: Vec<String>,
    /// Display abbreviations, aligned with `categories`; omitted when every
    /// category is its own abbreviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    short_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRecord {
    id: String,
    date: String,
    text: String,
    labels: BTreeMap<String, serde_json::Value>,
}

pub fn corpus_from_str(text: &str) -> Result<Corpus> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_no, header_line) = lines.next().ok_or_else(|| anyhow!("empty corpus file"))?;
    let header: CorpusHeader = serde_json::from_str(header_line).map_err(|e| {
        anyhow!("line {}: expected a header object {{\"categories\": [...]}}: {e}", header_no + 1)
    })?;
    let categories: Vec<Category> = match &header.short_names {
        Some(shorts) => {
            if shorts.len() != header.categories.len() {
                bail!(
                    "line {}: short_names has {} entries for {} categories",
                    header_no + 1,
                    shorts.len(),
                    header.categories.len()
                );
            }
            header
                .categories
                .iter()
                .zip(shorts)
                .map(|(name, short)| Category::with_short(name, short))
                .collect()
        }
        None => header.categories.iter().map(|n| Category::new(n)).collect(),
    };

    let mut reports = Vec::new();
    for (no, line) in lines {
        let record: CorpusRecord = serde_json::from_str(line)
            .map_err(|e| anyhow!("line {}: malformed record: {e}", no + 1))?;
        let date = parse_date(&record.date)
            .with_context(|| format!("line {}: report `{}`", no + 1, record.id))?;
        let mut gold = Vec::with_capacity(categories.len());
        for cat in &categories {
            let value = record.labels.get(&cat.name).ok_or_else(|| {
                anyhow!("line {}: report `{}`: missing label for category `{}`", no + 1, record.id, cat.name)
            })?;
            match value.as_i64() {
                Some(0) => gold.push(0u8),
                Some(1) => gold.push(1u8),
                _ => bail!(
                    "line {}: report `{}`: label not binary for category `{}` (value {value})",
                    no + 1,
                    record.id,
                    cat.name
                ),
            }
        }
        for key in record.labels.keys() {
            if !categories.iter().any(|c| &c.name == key) {
                bail!("line {}: report `{}`: unknown category `{key}`", no + 1, record.id);
            }
        }
        reports.push(Report {
            id: record.id,
            date,
            text: record.text,
            gold,
        });
    }
    Corpus::new(categories, reports).map_err(|e| anyhow!("invalid corpus: {e}"))
}

pub fn corpus_to_string(corpus: &Corpus) -> Result<String> {
    let categories: Vec<String> = corpus.categories().iter().map(|c| c.name.clone()).collect();
    let shorts: Vec<String> = corpus
        .categories()
        .iter()
        .map(|c| c.short_name.clone())
        .collect();
    let header = CorpusHeader {
        short_names: (categories != shorts).then_some(shorts),
        categories,
    };
    let mut out = serde_json::to_string(&header)?;
    out.push('\n');
    for report in corpus.reports() {
        let labels = corpus
            .categories()
            .iter()
            .zip(&report.gold)
            .map(|(c, &g)| (c.name.clone(), serde_json::Value::from(g)))
            .collect();
        let record = CorpusRecord {
            id: report.id.clone(),
            date: report.date.to_string(),
            text: report.text.clone(),
            labels,
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    corpus_from_str(&read_to_string(path)?)
        .with_context(|| format!("corpus file {}", path.display()))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    write_atomic(path, corpus_to_string(corpus)?.as_bytes())
}

// --- synthetic world description ------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSpecFile {
    categories: Vec<CategoryPatternsFile>,
    fillers: Vec<String>,
    size: usize,
    negation_rate: f64,
    date_start: String,
    date_end: String,
    id_prefix: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryPatternsFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    short_name: Option<String>,
    positive: Vec<String>,
    negation: Vec<String>,
    positive_rate: f64,
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    let file: SynthSpecFile = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("world description {}", path.display()))?;
    let categories = file
        .categories
        .into_iter()
        .map(|c| CategoryPatterns {
            category: match &c.short_name {
                Some(short) => Category::with_short(&c.name, short),
                None => Category::new(&c.name),
            },
            positive: c.positive,
            negation: c.negation,
            positive_rate: c.positive_rate,
        })
        .collect();
    Ok(SynthSpec {
        categories,
        fillers: file.fillers,
        size: file.size,
        negation_rate: file.negation_rate,
        date_start: parse_date(&file.date_start).context("date_start")?,
        date_end: parse_date(&file.date_end).context("date_end")?,
        id_prefix: file.id_prefix,
    })
}

pub fn save_synth_spec(spec: &SynthSpec, path: &Path) -> Result<()> {
    let file = SynthSpecFile {
        categories: spec
            .categories
            .iter()
            .map(|c| CategoryPatternsFile {
                name: c.category.name.clone(),
                short_name: (c.category.short_name != c.category.name)
                    .then(|| c.category.short_name.clone()),
                positive: c.positive.clone(),
                negation: c.negation.clone(),
                positive_rate: c.positive_rate,
            })
            .collect(),
        fillers: spec.fillers.clone(),
        size: spec.size,
        negation_rate: spec.negation_rate,
        date_start: spec.date_start.to_string(),
        date_end: spec.date_end.to_string(),
        id_prefix: spec.id_prefix.clone(),
    };
    write_atomic(path, &pretty(&file)?)
}

// --- verbalizer -----------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerbalizerFile {
    categories: Vec<VerbalizerEntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerbalizerEntryFile {
    name: String,
    words: Vec<String>,
}

pub fn load_verbalizer(path: &Path, mode: VerbalizerMode) -> Result<Verbalizer> {
    let file: VerbalizerFile = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("verbalizer file {}", path.display()))?;
    let lists = file
        .categories
        .into_iter()
        .map(|e| (e.name, e.words))
        .collect();
    Verbalizer::from_word_lists(mode, lists)
        .with_context(|| format!("verbalizer file {}", path.display()))
}

pub fn save_verbalizer(verbalizer: &Verbalizer, path: &Path) -> Result<()> {
    let file = VerbalizerFile {
        categories: verbalizer
            .entries()
            .iter()
            .map(|(name, words)| VerbalizerEntryFile {
                name: name.clone(),
                words: words.clone(),
            })
            .collect(),
    };
    write_atomic(path, &pretty(&file)?)
}

// --- template -------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateFile {
    id: String,
    format: String,
    prefix: String,
    infix: String,
    suffix: String,
}

pub fn load_template(path: &Path) -> Result<Template> {
    let file: TemplateFile = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("template file {}", path.display()))?;
    let format = match file.format.as_str() {
        "report_first" => TemplateFormat::ReportFirst,
        "answer_first" => TemplateFormat::AnswerFirst,
        other => bail!(
            "template file {}: unknown format `{other}` (expected `report_first` or `answer_first`)",
            path.display()
        ),
    };
    Template::new(&file.id, format, &file.prefix, &file.infix, &file.suffix)
        .with_context(|| format!("template file {}", path.display()))
}

pub fn save_template(template: &Template, path: &Path) -> Result<()> {
    let file = TemplateFile {
        id: template.id().to_string(),
        format: match template.format() {
            TemplateFormat::ReportFirst => "report_first".to_string(),
            TemplateFormat::AnswerFirst => "answer_first".to_string(),
        },
        prefix: template.prefix().to_string(),
        infix: template.infix().to_string(),
        suffix: template.suffix().to_string(),
    };
    write_atomic(path, &pretty(&file)?)
}

// --- mention lexicon ------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    categories: Vec<LexiconEntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconEntryFile {
    name: String,
    surface_forms: Vec<String>,
}

pub fn load_lexicon(path: &Path) -> Result<MentionLexicon> {
    let file: LexiconFile = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("lexicon file {}", path.display()))?;
    let lists = file
        .categories
        .into_iter()
        .map(|e| (e.name, e.surface_forms))
        .collect();
    MentionLexicon::from_lists(lists).with_context(|| format!("lexicon file {}", path.display()))
}

pub fn save_lexicon(lexicon: &MentionLexicon, path: &Path) -> Result<()> {
    let file = LexiconFile {
        categories: lexicon
            .entries()
            .iter()
            .map(|(name, forms)| LexiconEntryFile {
                name: name.clone(),
                surface_forms: forms.clone(),
            })
            .collect(),
    };
    write_atomic(path, &pretty(&file)?)
}

// --- negation cues --------------------------------------------------------

pub fn load_cues(path: &Path) -> Result<NegationCueSet> {
    let cues: Vec<String> = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("cue file {} (expected a JSON list)", path.display()))?;
    NegationCueSet::new(cues).with_context(|| format!("cue file {}", path.display()))
}

pub fn save_cues(cues: &NegationCueSet, path: &Path) -> Result<()> {
    write_atomic(path, &pretty(&cues.cues().to_vec())?)
}

// --- recorded chat fixture ------------------------------------------------

/// A fixture maps request digests to canned response strings.
pub fn load_fixture(path: &Path) -> Result<BTreeMap<String, String>> {
    serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("fixture file {} (expected a JSON object)", path.display()))
}

pub fn save_fixture(fixture: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    write_atomic(path, &pretty(fixture)?)
}

// --- hyperparameter grid --------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridFile {
    learning_rates: Vec<f64>,
    batch_sizes: Vec<usize>,
    warmup_ratios: Vec<f64>,
    thresholds: Vec<f64>,
    epochs: usize,
}

pub fn load_grid(path: &Path) -> Result<GridSpec> {
    let file: GridFile = serde_json::from_str(&read_to_string(path)?)
        .with_context(|| format!("grid file {}", path.display()))?;
    let grid = GridSpec {
        learning_rates: file.learning_rates,
        batch_sizes: file.batch_sizes,
        warmup_ratios: file.warmup_ratios,
        thresholds: file.thresholds,
        epochs: file.epochs,
    };
    grid.validate()
        .with_context(|| format!("grid file {}", path.display()))?;
    Ok(grid)
}

pub fn save_grid(grid: &GridSpec, path: &Path) -> Result<()> {
    let file = GridFile {
        learning_rates: grid.learning_rates.clone(),
        batch_sizes: grid.batch_sizes.clone(),
        warmup_ratios: grid.warmup_ratios.clone(),
        thresholds: grid.thresholds.clone(),
        epochs: grid.epochs,
    };
    write_atomic(path, &pretty(&file)?)
}
