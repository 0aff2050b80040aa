//! Comparison labelers: surface-form matching, cue-based negation handling,
//! and a chat-completion client (request construction and response parsing).
//!
//! Label Match marks a category positive whenever one of its surface forms
//! occurs as a word-bounded, case-insensitive substring, with plural handling
//! for `+s` and the Latin `-is` to `-es` shift (metastasis/metastases). The
//! negation-cue labeler additionally suppresses mentions preceded by a cue in
//! the same sentence. Neither parses dependencies; both are deliberately
//! simple reference points.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Category, Corpus};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BaselineError {
    #[error("category `{0}` has no surface forms")]
    EmptySurfaceForms(String),
    #[error("negation cue set is empty")]
    EmptyCueSet,
    #[error("chat transport failed: {0}")]
    Transport(String),
}

/// One located occurrence of a surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    /// The surface form (or plural variant) that matched, lowercase.
    pub form: String,
    /// Byte offset of the match in the report text.
    pub offset: usize,
}

/// Per-category surface forms for mention matching, lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MentionLexicon {
    entries: Vec<(String, Vec<String>)>,
}

impl MentionLexicon {
    pub fn from_lists(lists: Vec<(String, Vec<String>)>) -> Result<Self, BaselineError> {
        let mut entries = Vec::with_capacity(lists.len());
        for (category, forms) in lists {
            let forms: Vec<String> = forms
                .into_iter()
                .map(|f| f.to_lowercase())
                .filter(|f| !f.trim().is_empty())
                .collect();
            if forms.is_empty() {
                return Err(BaselineError::EmptySurfaceForms(category));
            }
            entries.push((category, forms));
        }
        Ok(Self { entries })
    }

    /// Category names and short names only — no synonyms.
    pub fn from_category_names(categories: &[Category]) -> Self {
        let entries = categories
            .iter()
            .map(|c| {
                let mut forms = vec![c.name.to_lowercase()];
                let short = c.short_name.to_lowercase();
                if !forms.contains(&short) {
                    forms.push(short);
                }
                (c.name.clone(), forms)
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Vec<String>)] {
        &self.entries
    }

    pub fn category_forms(&self, index: usize) -> &[String] {
        &self.entries[index].1
    }
}

/// Plural variants considered for a surface form: the form itself, `+s`,
/// and `-is` rewritten to `-es`.
fn form_variants(form: &str) -> Vec<String> {
    let mut variants = vec![form.to_owned(), format!("{form}s")];
    if let Some(stem) = form.strip_suffix("is") {
        variants.push(format!("{stem}es"));
    }
    variants
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric()
}

/// Word-bounded occurrences of `needle` in `haystack` (both lowercase).
fn bounded_occurrences(haystack: &str, needle: &str) -> Vec<usize> {
    let mut hits = Vec::new();
    if needle.is_empty() {
        return hits;
    }
    let bytes = haystack.as_bytes();
    let mut from = 0;
    while let Some(pos) = haystack[from..].find(needle) {
        let start = from + pos;
        let end = start + needle.len();
        let left_ok = start == 0 || !is_word_byte(bytes[start - 1]);
        let right_ok = end == bytes.len() || !is_word_byte(bytes[end]);
        if left_ok && right_ok {
            hits.push(start);
        }
        from = start + 1;
    }
    hits
}

/// All mentions of any of `forms` in `text`, case-insensitive, sorted by
/// offset.
pub fn find_mentions(text: &str, forms: &[String]) -> Vec<Mention> {
    let lower = text.to_ascii_lowercase();
    let mut mentions = Vec::new();
    for form in forms {
        for variant in form_variants(form) {
            for offset in bounded_occurrences(&lower, &variant) {
                mentions.push(Mention {
                    form: variant.clone(),
                    offset,
                });
            }
        }
    }
    mentions.sort_by(|a, b| a.offset.cmp(&b.offset).then(a.form.cmp(&b.form)));
    mentions.dedup();
    mentions
}

/// Mark each category positive iff one of its surface forms occurs.
/// No negation handling: "No liver cirrhosis." still marks Cirrhosis.
pub fn label_match(text: &str, lexicon: &MentionLexicon) -> Vec<u8> {
    lexicon
        .entries
        .iter()
        .map(|(_, forms)| u8::from(!find_mentions(text, forms).is_empty()))
        .collect()
}

/// Pre-mention negation cues, lowercase, scoped to one sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationCueSet {
    cues: Vec<String>,
}

impl NegationCueSet {
    pub fn new(cues: Vec<String>) -> Result<Self, BaselineError> {
        let cues: Vec<String> = cues
            .into_iter()
            .map(|c| c.to_lowercase())
            .filter(|c| !c.trim().is_empty())
            .collect();
        if cues.is_empty() {
            return Err(BaselineError::EmptyCueSet);
        }
        Ok(Self { cues })
    }

    pub fn cues(&self) -> &[String] {
        &self.cues
    }
}

impl Default for NegationCueSet {
    fn default() -> Self {
        Self {
            cues: [
                "no",
                "not",
                "without",
                "r/o",
                "rule out",
                "no evidence of",
                "free of",
                "negative for",
                "rather than",
            ]
            .iter()
            .map(|c| c.to_string())
            .collect(),
        }
    }
}

/// Sentence spans `(start, end)` split on `.`, `;`, and newlines.
fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (i, b) in text.bytes().enumerate() {
        if b == b'.' || b == b';' || b == b'\n' {
            spans.push((start, i));
            start = i + 1;
        }
    }
    if start < text.len() {
        spans.push((start, text.len()));
    }
    spans
}

/// Like [`label_match`], but a mention is suppressed when a cue starts before
/// it within the same sentence; positive iff an unsuppressed mention remains.
pub fn negation_cue_label(text: &str, lexicon: &MentionLexicon, cues: &NegationCueSet) -> Vec<u8> {
    let lower = text.to_ascii_lowercase();
    let spans = sentence_spans(&lower);
    let mut cue_offsets = Vec::new();
    for cue in &cues.cues {
        cue_offsets.extend(bounded_occurrences(&lower, cue));
    }
    let suppressed = |mention: &Mention| -> bool {
        let Some(&(s, e)) = spans.iter().find(|&&(s, e)| (s..e).contains(&mention.offset))
        else {
            return false;
        };
        cue_offsets
            .iter()
            .any(|&c| c >= s && c < e && c < mention.offset)
    };
    lexicon
        .entries
        .iter()
        .map(|(_, forms)| {
            let positive = find_mentions(text, forms).iter().any(|m| !suppressed(m));
            u8::from(positive)
        })
        .collect()
}

/// A chat request for one report; `digest` keys recorded fixtures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
}

impl ChatRequest {
    /// Hex SHA-256 over the two messages, for fixture lookup and manifests.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.system.as_bytes());
        hasher.update([0x1f]);
        hasher.update(self.user.as_bytes());
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in out {
            use core::fmt::Write;
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

/// One completed request/response round trip with its parsed labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatExchange {
    pub request: ChatRequest,
    pub response: String,
    pub labels: Vec<u8>,
}

/// Wire-level side of the chat labeler; injected so tests replay fixtures.
pub trait ChatTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, BaselineError>;
}

/// Legend key for a category: its short name when that is a distinct
/// acronym, otherwise the lowercased name ("HCC" but "cirrhosis").
pub fn legend_key(category: &Category) -> String {
    let is_acronym = category.short_name != category.name
        && category
            .short_name
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit());
    if is_acronym {
        category.short_name.clone()
    } else {
        category.name.to_lowercase()
    }
}

fn legend(categories: &[Category]) -> String {
    let mut out = String::from("{");
    for (i, c) in categories.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push('\'');
        out.push_str(&legend_key(c));
        out.push_str("': ");
        out.push_str(&i.to_string());
    }
    out.push('}');
    out
}

const SYSTEM_MESSAGE: &str = "You are a professional radiologist who knows computed tomography \
(CT) very much. You can classify the CT report for the liver features or symptoms.";

/// Zero-shot request: system role plus one user message carrying the legend
/// and the report text.
pub fn build_chat_request(report_text: &str, categories: &[Category]) -> ChatRequest {
    ChatRequest {
        system: SYSTEM_MESSAGE.to_string(),
        user: format!(
            "Now you are going to perform a multi-label classification for a text report of \
liver computed tomography (CT). Given the potential categorized features {}, please read the \
following liver computed tomography report of a patient. If the report is positive with a \
feature, please return the corresponding value. Liver computed tomography: {}",
            legend(categories),
            report_text
        ),
    }
}

/// In-context variant: prepends `k` labeled exemplars drawn from `train`
/// without replacement, deterministically per seed.
pub fn build_chat_request_icl(
    report_text: &str,
    categories: &[Category],
    train: &Corpus,
    k: usize,
    seed: u64,
) -> ChatRequest {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..train.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(k);

    let mut preamble = format!("Here are {} labeled examples.\n\n", indices.len());
    for (number, &idx) in indices.iter().enumerate() {
        let report = &train.reports()[idx];
        let mut positives: Vec<String> = Vec::new();
        for (i, &g) in report.gold.iter().enumerate() {
            if g == 1 {
                positives.push(legend_key(&categories[i]));
            }
        }
        let features = if positives.is_empty() {
            "none".to_string()
        } else {
            positives.join(", ")
        };
        preamble.push_str(&format!(
            "Example {}:\nLiver computed tomography: {}\nPositive features: {}\n\n",
            number + 1,
            report.text,
            features
        ));
    }
    let base = build_chat_request(report_text, categories);
    ChatRequest {
        system: base.system,
        user: format!("{preamble}{}", base.user),
    }
}

/// Index at the start of a response line: digits followed by `.`, `)`, `:`
/// or the end of the line ("3. Cirrhosis", "0"). Returns `None` otherwise,
/// so "2 cysts" is not an index claim.
fn leading_index(line: &str) -> Option<usize> {
    let line = line.trim_start();
    let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        return None;
    }
    let rest = &line[digits.len()..];
    match rest.trim_end().chars().next() {
        None => digits.parse().ok(),
        Some('.') | Some(')') | Some(':') => digits.parse().ok(),
        Some(_) => None,
    }
}

/// Total, lenient response parser: positive iff the category's legend index
/// appears at a line start, or its name / short name appears word-bounded
/// anywhere. Empty or unrecognized responses parse to all zeros.
pub fn parse_chat_response(text: &str, categories: &[Category]) -> Vec<u8> {
    let mut labels = vec![0u8; categories.len()];
    for line in text.lines() {
        if let Some(index) = leading_index(line) {
            if index < labels.len() {
                labels[index] = 1;
            }
        }
    }
    for (i, category) in categories.iter().enumerate() {
        let mut forms = vec![category.name.to_lowercase()];
        let short = category.short_name.to_lowercase();
        if !forms.contains(&short) {
            forms.push(short);
        }
        if !find_mentions(text, &forms).is_empty() {
            labels[i] = 1;
        }
    }
    labels
}

/// Send one report through the transport and parse the reply.
pub fn chat_label(
    transport: &dyn ChatTransport,
    request: ChatRequest,
    categories: &[Category],
) -> Result<ChatExchange, BaselineError> {
    let response = transport.complete(&request)?;
    let labels = parse_chat_response(&response, categories);
    Ok(ChatExchange {
        request,
        response,
        labels,
    })
}

/// Canned transport keyed by request digest; missing entries error.
pub struct MapTransport {
    responses: BTreeMap<String, String>,
}

impl MapTransport {
    pub fn new(responses: BTreeMap<String, String>) -> Self {
        Self { responses }
    }
}

impl ChatTransport for MapTransport {
    fn complete(&self, request: &ChatRequest) -> Result<String, BaselineError> {
        self.responses
            .get(&request.digest())
            .cloned()
            .ok_or_else(|| BaselineError::Transport(format!("no response recorded for request {}", request.digest())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Report;
    use proptest::prelude::*;

    fn liver_categories() -> Vec<Category> {
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

    fn name_lexicon() -> MentionLexicon {
        MentionLexicon::from_category_names(&liver_categories())
    }

    #[test]
    fn plural_forms_match() {
        let lexicon = name_lexicon();
        let labels = label_match("Multiple hepatic metastases are noted.", &lexicon);
        assert_eq!(labels[5], 1);
        let labels = label_match("Two cysts in S7.", &lexicon);
        assert_eq!(labels[0], 1);
    }

    #[test]
    fn word_boundaries_block_substring_hits() {
        let lexicon = name_lexicon();
        let labels = label_match("A cystic lesion.", &lexicon);
        assert_eq!(labels[0], 0, "cyst must not match inside cystic");
        let labels = label_match("A cyst-like lesion.", &lexicon);
        assert_eq!(labels[0], 1, "hyphen is a word boundary");
    }

    #[test]
    fn label_match_ignores_negation() {
        let labels = label_match("No liver cirrhosis.", &name_lexicon());
        assert_eq!(labels[3], 1);
    }

    #[test]
    fn name_only_lexicon_misses_synonyms() {
        let labels = label_match("Remarkable fatty liver with GB stones;", &name_lexicon());
        assert_eq!(labels[4], 0);
    }

    #[test]
    fn cues_suppress_same_sentence_mentions() {
        let lexicon = name_lexicon();
        let cues = NegationCueSet::default();
        let no = negation_cue_label("No liver cirrhosis.", &lexicon, &cues);
        assert_eq!(no[3], 0);
        let ro = negation_cue_label(
            "R/O metastasis in the anterior abdominal wall.",
            &lexicon,
            &cues,
        );
        assert_eq!(ro[5], 0);
        let plain = negation_cue_label("Mild liver cirrhosis and portal hypertension.", &lexicon, &cues);
        assert_eq!(plain[3], 1);
    }

    #[test]
    fn cue_scope_ends_at_sentence_boundary() {
        let lexicon = name_lexicon();
        let cues = NegationCueSet::default();
        let labels = negation_cue_label("No change. Liver cirrhosis present.", &lexicon, &cues);
        assert_eq!(labels[3], 1, "cue in a previous sentence must not suppress");
        let labels = negation_cue_label("Nodular liver surface; cirrhosis.", &lexicon, &cues);
        assert_eq!(labels[3], 1, "'no' inside 'nodular' is not a cue");
    }

    #[test]
    fn suppression_only_removes_positives() {
        let lexicon = name_lexicon();
        let cues = NegationCueSet::default();
        let texts = [
            "No obvious hypervascular nodule nor HCC in both lobes liver.",
            "Mild liver cirrhosis and portal hypertension.",
            "A tiny hepatic cyst in S7/8> Patency of the SMV",
            "Good response to previous TACE without viability",
        ];
        for text in texts {
            let plain = label_match(text, &lexicon);
            let negated = negation_cue_label(text, &lexicon, &cues);
            for (p, n) in plain.iter().zip(&negated) {
                assert!(n <= p, "{text}");
            }
        }
    }

    #[test]
    fn legend_uses_acronyms_and_lowercase_names() {
        let categories = liver_categories();
        let request = build_chat_request("some text", &categories);
        assert!(request.user.contains(
            "{'cyst': 0, 'HCC': 1, 'post-treatment': 2, 'cirrhosis': 3, 'steatosis': 4, \
'metastasis': 5, 'hemangioma': 6}"
        ));
        assert!(request.system.starts_with("You are a professional radiologist"));
        assert!(request.user.ends_with("Liver computed tomography: some text"));
    }

    #[test]
    fn empty_report_still_builds_request() {
        let request = build_chat_request("", &liver_categories());
        assert!(request.user.ends_with("Liver computed tomography: "));
    }

    #[test]
    fn icl_exemplars_are_deterministic_per_seed() {
        let categories = liver_categories();
        let reports: Vec<Report> = (0..6)
            .map(|i| Report {
                id: format!("r{i}"),
                date: "2014-01-01".parse().unwrap(),
                text: format!("report number {i}"),
                gold: {
                    let mut g = vec![0u8; 7];
                    g[i % 7] = 1;
                    g
                },
            })
            .collect();
        let train = Corpus::new(categories.clone(), reports).unwrap();
        let a = build_chat_request_icl("target", &categories, &train, 3, 9);
        let b = build_chat_request_icl("target", &categories, &train, 3, 9);
        assert_eq!(a, b);
        assert_eq!(a.user.matches("Example ").count(), 3);
        assert!(a.user.contains("Positive features: "));
    }

    #[test]
    fn parses_numbered_names_response() {
        let labels = parse_chat_response(
            "1. HCC (Hepatocellular carcinoma)\n3. Cirrhosis",
            &liver_categories(),
        );
        assert_eq!(labels, vec![0, 1, 0, 1, 0, 0, 0]);
    }

    #[test]
    fn parses_bare_index_and_ignores_counts() {
        let categories = liver_categories();
        assert_eq!(parse_chat_response("0", &categories)[0], 1);
        let counts = parse_chat_response("2 lesions seen", &categories);
        assert_eq!(counts, vec![0u8; 7], "a count is not an index claim");
        assert_eq!(parse_chat_response("", &categories), vec![0u8; 7]);
        assert_eq!(parse_chat_response("9. nothing", &categories), vec![0u8; 7]);
    }

    #[test]
    fn fixture_transport_replays_by_digest() {
        let categories = liver_categories();
        let request = build_chat_request("Mild liver cirrhosis.", &categories);
        let mut canned = BTreeMap::new();
        canned.insert(request.digest(), "3. Cirrhosis".to_string());
        let transport = MapTransport::new(canned);
        let exchange = chat_label(&transport, request, &categories).unwrap();
        assert_eq!(exchange.labels[3], 1);
        let missing = build_chat_request("other", &categories);
        assert!(matches!(
            transport.complete(&missing),
            Err(BaselineError::Transport(_))
        ));
    }

    proptest! {
        /// The parser is total and appending neutral text never flips
        /// label_match positives off.
        #[test]
        fn parser_total_and_match_monotone(
            response in ".{0,60}",
            text in "[a-z .;]{0,60}",
        ) {
            let categories = liver_categories();
            let labels = parse_chat_response(&response, &categories);
            prop_assert_eq!(labels.len(), 7);
            let lexicon = name_lexicon();
            let base = label_match(&text, &lexicon);
            let extended = format!("{text} and unrelated closing words");
            let more = label_match(&extended, &lexicon);
            for (b, m) in base.iter().zip(&more) {
                prop_assert!(m >= b);
            }
        }
    }
}
