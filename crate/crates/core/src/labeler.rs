//! Rule-based detection of abnormality mentions in dictated report
//! sentences, with negation and uncertainty scoping and grouping of raw
//! labels into the study label set.
//!
//! The engine is deliberately simple: lowercase token phrases, a fixed
//! token window for negation scope, and an explicit grouping table mapping
//! raw mention labels (e.g. "cardiomegaly") onto study labels (e.g. ECS).
//! The rule file format is documented in the README; [`RuleSet::default`]
//! ships a small table sufficient for dictation-style reports and for the
//! synthetic corpus.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Sentence, Session};

/// A study label. The default universe is the ten grouped labels
/// (AMC, Atelectasis, ECS, Consolidation, Edema, Fracture, Lung Lesion,
/// Opacity, Pleural Abnormality, Pneumothorax) but any rule file defines
/// its own closed set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(String);

impl LabelId {
    pub fn new(name: impl Into<String>) -> Self {
        LabelId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Filesystem-safe form (spaces replaced with underscores).
    pub fn file_stem(&self) -> String {
        self.0.replace(' ', "_")
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Mention polarity after negation/uncertainty scoping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
}

/// Detection rules for one raw label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRule {
    /// Raw label name; resolved to study labels through the grouping table.
    pub name: String,
    /// Token phrases that produce a mention.
    #[serde(rename = "match")]
    pub match_phrases: Vec<Vec<String>>,
    /// Token phrases that veto any overlapping match.
    #[serde(default)]
    pub unmatch: Vec<Vec<String>>,
    /// Negation phrases scoping forward ("no ...").
    #[serde(default)]
    pub negation_pre: Vec<Vec<String>>,
    /// Negation phrases scoping backward ("... not seen").
    #[serde(default)]
    pub negation_post: Vec<Vec<String>>,
    /// Uncertainty phrases; scope on both sides.
    #[serde(default)]
    pub uncertain: Vec<Vec<String>>,
}

fn default_negation_window() -> usize {
    6
}

fn default_uncertain_as_positive() -> bool {
    true
}

/// The full rule file: per-raw-label rules, the scope window and the
/// grouping of raw labels into study labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSet {
    pub labels: Vec<LabelRule>,
    /// Maximum token gap between a scoping phrase and the span it scopes.
    #[serde(default = "default_negation_window")]
    pub negation_window: usize,
    /// Raw label -> study labels. A raw label listed under several study
    /// labels yields a mention for each of them.
    pub grouping: BTreeMap<String, Vec<LabelId>>,
    /// Whether an Uncertain image-level polarity counts as Positive.
    #[serde(default = "default_uncertain_as_positive")]
    pub uncertain_as_positive: bool,
}

impl RuleSet {
    pub fn from_json(content: &str) -> Result<Self> {
        let rules: RuleSet = serde_json::from_str(content).map_err(|e| {
            Error::InvalidConfig(format!("rules file: {e}"))
        })?;
        rules.validate()?;
        Ok(rules)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&content)
    }

    fn validate(&self) -> Result<()> {
        if self.negation_window == 0 {
            return Err(Error::InvalidConfig("negation_window must be >= 1".into()));
        }
        for rule in &self.labels {
            let all = rule
                .match_phrases
                .iter()
                .chain(&rule.unmatch)
                .chain(&rule.negation_pre)
                .chain(&rule.negation_post)
                .chain(&rule.uncertain);
            for phrase in all {
                if phrase.is_empty() || phrase.iter().any(|t| t.is_empty()) {
                    return Err(Error::InvalidConfig(format!(
                        "rule {:?} contains an empty phrase or token",
                        rule.name
                    )));
                }
                if phrase.iter().any(|t| t.chars().any(|c| c.is_uppercase())) {
                    return Err(Error::InvalidConfig(format!(
                        "rule {:?}: phrases must be lowercase",
                        rule.name
                    )));
                }
            }
            if !self.grouping.contains_key(&rule.name) {
                return Err(Error::InvalidConfig(format!(
                    "raw label {:?} has no grouping entry",
                    rule.name
                )));
            }
        }
        Ok(())
    }

    /// The study labels reachable through the grouping table, sorted.
    pub fn study_labels(&self) -> Vec<LabelId> {
        let set: BTreeSet<LabelId> = self.grouping.values().flatten().cloned().collect();
        set.into_iter().collect()
    }

    /// Rules for the raw label named `name`, if present.
    pub fn rule(&self, name: &str) -> Option<&LabelRule> {
        self.labels.iter().find(|r| r.name == name)
    }
}

impl Default for RuleSet {
    /// A compact default rule table covering the ten study labels.
    fn default() -> Self {
        default_rules()
    }
}

/// A detected mention of a study label within one sentence. When a label
/// matches several disjoint spans in the same sentence, `detect_mentions`
/// reports them separately; [`label_report`] then folds them into a single
/// per-sentence mention whose `t_first_mention_end`/`t_last_mention_end`
/// give the ends of the first and last matched spans. Those two timestamps
/// are the window endpoints used by heatmap extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMention {
    pub label: LabelId,
    pub sentence_index: usize,
    pub polarity: Polarity,
    pub t_first_mention_end: f64,
    pub t_last_mention_end: f64,
    /// Token range in the sentence's normalized token stream.
    pub matched_span: (usize, usize),
}

/// Image-level verdict for one label plus its positive mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFinding {
    pub polarity: Polarity,
    /// Per-sentence positive mentions; each one later yields a heatmap.
    pub positive_mentions: Vec<LabelMention>,
}

/// A normalized token: lowercased, punctuation stripped, carrying the
/// timestamps of its source word.
#[derive(Debug, Clone)]
struct Token {
    text: String,
    t_end: f64,
}

/// Lowercases and splits a sentence into matchable tokens. Words are split
/// on any non-alphanumeric character; fragments inherit the word's
/// timestamps. Purely punctuational words vanish.
fn tokenize(sentence: &Sentence) -> Vec<Token> {
    let mut tokens = Vec::with_capacity(sentence.words.len());
    for word in &sentence.words {
        for piece in word
            .text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|p| !p.is_empty())
        {
            tokens.push(Token {
                text: piece.to_lowercase(),
                t_end: word.t_end,
            });
        }
    }
    tokens
}

fn find_phrase(tokens: &[Token], phrase: &[String]) -> Vec<(usize, usize)> {
    let mut hits = Vec::new();
    if phrase.is_empty() || phrase.len() > tokens.len() {
        return hits;
    }
    for start in 0..=(tokens.len() - phrase.len()) {
        if phrase
            .iter()
            .enumerate()
            .all(|(i, p)| tokens[start + i].text == *p)
        {
            hits.push((start, start + phrase.len()));
        }
    }
    hits
}

fn spans_overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < b.1 && b.0 < a.1
}

/// Polarity of a span given the scoping phrases of the rules that produced
/// it. Negation wins over uncertainty; `window` is the maximum token gap
/// between the scoping phrase and the span on its scoping side.
fn scope_polarity(tokens: &[Token], span: (usize, usize), rules: &[&LabelRule], window: usize) -> Polarity {
    let scoped_pre = |phrase_end: usize| span.0 >= phrase_end && span.0 - phrase_end < window;
    let scoped_post = |phrase_start: usize| phrase_start >= span.1 && phrase_start - span.1 < window;

    for rule in rules {
        for phrase in &rule.negation_pre {
            if find_phrase(tokens, phrase).iter().any(|&(_, e)| scoped_pre(e)) {
                return Polarity::Negative;
            }
        }
        for phrase in &rule.negation_post {
            if find_phrase(tokens, phrase).iter().any(|&(s, _)| scoped_post(s)) {
                return Polarity::Negative;
            }
        }
    }
    for rule in rules {
        for phrase in &rule.uncertain {
            let hits = find_phrase(tokens, phrase);
            if hits
                .iter()
                .any(|&(s, e)| scoped_pre(e) || scoped_post(s))
            {
                return Polarity::Uncertain;
            }
        }
    }
    Polarity::Positive
}

/// Maps a raw mention label onto its study labels.
///
/// Raw labels listed under several study labels yield every one of them.
pub fn group_labels(raw: &str, grouping: &BTreeMap<String, Vec<LabelId>>) -> Result<Vec<LabelId>> {
    grouping
        .get(raw)
        .cloned()
        .ok_or_else(|| Error::UnknownRawLabel(raw.to_string()))
}

/// Runs every rule against one sentence and reports label mentions.
///
/// Per study label, matched spans from all contributing raw rules are
/// merged when they overlap; a span overlapped by an unmatch phrase of the
/// rule that produced it is vetoed. Mention timestamps are the `t_end` of
/// the last token of the matched span. The result is ordered by label, then
/// span start.
pub fn detect_mentions(sentence: &Sentence, rules: &RuleSet) -> Vec<LabelMention> {
    let tokens = tokenize(sentence);
    if tokens.is_empty() {
        return Vec::new();
    }

    // Raw matches surviving their rule's unmatch veto, routed to study
    // labels. Per study label we keep (span, contributing rule).
    let mut per_label: BTreeMap<LabelId, Vec<((usize, usize), &LabelRule)>> = BTreeMap::new();
    for rule in &rules.labels {
        let vetoes: Vec<(usize, usize)> = rule
            .unmatch
            .iter()
            .flat_map(|p| find_phrase(&tokens, p))
            .collect();
        let mut spans: Vec<(usize, usize)> = rule
            .match_phrases
            .iter()
            .flat_map(|p| find_phrase(&tokens, p))
            .filter(|span| !vetoes.iter().any(|v| spans_overlap(*span, *v)))
            .collect();
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        spans.dedup();
        // The grouping entry is guaranteed by RuleSet::validate for loaded
        // rule sets; hand-built ones fail loudly here.
        let targets = group_labels(&rule.name, &rules.grouping)
            .expect("rule without grouping entry");
        for target in targets {
            let entry = per_label.entry(target).or_default();
            entry.extend(spans.iter().map(|&s| (s, rule)));
        }
    }

    let mut mentions = Vec::new();
    for (label, mut spans) in per_label {
        spans.sort_by_key(|(span, _)| *span);
        // Merge overlapping spans into maximal runs, keeping every
        // contributing rule for scope lookup.
        let mut merged: Vec<((usize, usize), Vec<&LabelRule>)> = Vec::new();
        for (span, rule) in spans {
            match merged.last_mut() {
                Some((last, contributors)) if spans_overlap(*last, span) => {
                    last.1 = last.1.max(span.1);
                    if !contributors.iter().any(|r| r.name == rule.name) {
                        contributors.push(rule);
                    }
                }
                _ => merged.push((span, vec![rule])),
            }
        }
        for (span, contributors) in merged {
            let polarity = scope_polarity(&tokens, span, &contributors, rules.negation_window);
            let t_end = tokens[span.1 - 1].t_end;
            mentions.push(LabelMention {
                label: label.clone(),
                sentence_index: sentence.index,
                polarity,
                t_first_mention_end: t_end,
                t_last_mention_end: t_end,
                matched_span: span,
            });
        }
    }
    mentions
}

/// Labels a whole report: runs [`detect_mentions`] over every sentence and
/// aggregates per study label.
///
/// Image-level polarity is Positive if any positive mention exists,
/// otherwise Uncertain if any uncertain mention exists (counted per
/// `uncertain_as_positive` when callers want a binary decision), otherwise
/// Negative. Positive mentions of the same label within one sentence are
/// folded into a single per-sentence mention covering the first to last
/// matched span, because the extraction window ends at the last mention of
/// the sentence.
pub fn label_report(session: &Session, rules: &RuleSet) -> BTreeMap<LabelId, LabelFinding> {
    let mut per_label: BTreeMap<LabelId, Vec<LabelMention>> = BTreeMap::new();
    for sentence in &session.sentences {
        for mention in detect_mentions(sentence, rules) {
            per_label.entry(mention.label.clone()).or_default().push(mention);
        }
    }

    let mut report = BTreeMap::new();
    for (label, mentions) in per_label {
        let polarity = if mentions.iter().any(|m| m.polarity == Polarity::Positive) {
            Polarity::Positive
        } else if mentions.iter().any(|m| m.polarity == Polarity::Uncertain) {
            Polarity::Uncertain
        } else {
            Polarity::Negative
        };

        // One merged mention per sentence that had at least one positive
        // (or, under uncertain_as_positive, uncertain) span.
        let counts_as_positive = |p: Polarity| {
            p == Polarity::Positive
                || (rules.uncertain_as_positive && p == Polarity::Uncertain)
        };
        let mut by_sentence: BTreeMap<usize, Vec<&LabelMention>> = BTreeMap::new();
        for mention in mentions.iter().filter(|m| counts_as_positive(m.polarity)) {
            by_sentence.entry(mention.sentence_index).or_default().push(mention);
        }
        let positive_mentions = by_sentence
            .into_iter()
            .map(|(sentence_index, group)| {
                let first = group
                    .iter()
                    .map(|m| m.t_first_mention_end)
                    .fold(f64::INFINITY, f64::min);
                let last = group
                    .iter()
                    .map(|m| m.t_last_mention_end)
                    .fold(f64::NEG_INFINITY, f64::max);
                let span_start = group.iter().map(|m| m.matched_span.0).min().unwrap();
                let span_end = group.iter().map(|m| m.matched_span.1).max().unwrap();
                LabelMention {
                    label: label.clone(),
                    sentence_index,
                    polarity: Polarity::Positive,
                    t_first_mention_end: first,
                    t_last_mention_end: last,
                    matched_span: (span_start, span_end),
                }
            })
            .collect();

        report.insert(
            label,
            LabelFinding {
                polarity,
                positive_mentions,
            },
        );
    }
    report
}

/// Whether a finding counts as image-level positive under the rule set's
/// uncertainty policy.
pub fn is_image_positive(finding: &LabelFinding, rules: &RuleSet) -> bool {
    match finding.polarity {
        Polarity::Positive => true,
        Polarity::Uncertain => rules.uncertain_as_positive,
        Polarity::Negative => false,
    }
}

/// Per-label recall and precision of image-level positive decisions.
/// `None` means the denominator was zero (no gold positives for recall, no
/// predicted positives for precision).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionRecall {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

/// Scores predicted positive-label sets against gold, image by image.
///
/// Both corpora must cover the same image ids. Undefined cells are reported
/// as `None`, never as 0.
pub fn evaluate_labeler(
    predictions: &BTreeMap<String, BTreeSet<LabelId>>,
    gold: &BTreeMap<String, BTreeSet<LabelId>>,
) -> Result<BTreeMap<LabelId, PrecisionRecall>> {
    if predictions.len() != gold.len()
        || predictions.keys().zip(gold.keys()).any(|(a, b)| a != b)
    {
        return Err(Error::CorpusMismatch(format!(
            "prediction corpus has {} images, gold has {}",
            predictions.len(),
            gold.len()
        )));
    }

    let labels: BTreeSet<LabelId> = predictions
        .values()
        .chain(gold.values())
        .flatten()
        .cloned()
        .collect();

    let mut out = BTreeMap::new();
    for label in labels {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (image, predicted) in predictions {
            let has_pred = predicted.contains(&label);
            let has_gold = gold[image].contains(&label);
            match (has_pred, has_gold) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let recall = (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64);
        let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
        out.insert(
            label,
            PrecisionRecall {
                true_positives: tp,
                false_positives: fp,
                false_negatives: fn_,
                recall,
                precision,
            },
        );
    }
    Ok(out)
}

/// Study label name constants for the default rule table.
pub mod labels {
    pub const AMC: &str = "AMC";
    pub const ATELECTASIS: &str = "Atelectasis";
    pub const ECS: &str = "ECS";
    pub const CONSOLIDATION: &str = "Consolidation";
    pub const EDEMA: &str = "Edema";
    pub const FRACTURE: &str = "Fracture";
    pub const LUNG_LESION: &str = "Lung Lesion";
    pub const OPACITY: &str = "Opacity";
    pub const PLEURAL_ABNORMALITY: &str = "Pleural Abnormality";
    pub const PNEUMOTHORAX: &str = "Pneumothorax";

    pub const ALL: [&str; 10] = [
        AMC,
        ATELECTASIS,
        ECS,
        CONSOLIDATION,
        EDEMA,
        FRACTURE,
        LUNG_LESION,
        OPACITY,
        PLEURAL_ABNORMALITY,
        PNEUMOTHORAX,
    ];
}

fn phrases(items: &[&str]) -> Vec<Vec<String>> {
    items
        .iter()
        .map(|p| p.split_whitespace().map(str::to_string).collect())
        .collect()
}

fn shared_negation_pre() -> Vec<Vec<String>> {
    phrases(&[
        "no",
        "without",
        "negative for",
        "free of",
        "resolution of",
        "clear of",
    ])
}

fn shared_negation_post() -> Vec<Vec<String>> {
    phrases(&[
        "not seen",
        "is not seen",
        "has resolved",
        "have resolved",
        "is absent",
        "are absent",
        "has cleared",
    ])
}

fn shared_uncertain() -> Vec<Vec<String>> {
    phrases(&[
        "possible",
        "possibly",
        "questionable",
        "may represent",
        "cannot exclude",
        "cannot rule out",
    ])
}

fn rule(name: &str, match_phrases: &[&str], unmatch: &[&str]) -> LabelRule {
    LabelRule {
        name: name.to_string(),
        match_phrases: phrases(match_phrases),
        unmatch: phrases(unmatch),
        negation_pre: shared_negation_pre(),
        negation_post: shared_negation_post(),
        uncertain: shared_uncertain(),
    }
}

/// The built-in rule table: raw-label detection rules plus the grouping of
/// raw labels onto the ten study labels.
pub fn default_rules() -> RuleSet {
    use labels::*;

    let rules = vec![
        rule(
            "enlarged cardiomediastinum",
            &["enlarged cardiomediastinum", "widened mediastinum", "mediastinal widening"],
            &[],
        ),
        rule(
            "abnormal mediastinal contour",
            &["abnormal mediastinal contour", "mediastinal contour abnormality"],
            &[],
        ),
        rule("atelectasis", &["atelectasis", "atelectatic changes"], &[]),
        rule("cardiomegaly", &["cardiomegaly", "enlarged heart"], &[]),
        rule(
            "enlarged cardiac silhouette",
            &["enlarged cardiac silhouette", "cardiac silhouette is enlarged"],
            &[],
        ),
        rule(
            "consolidation",
            &["consolidation", "consolidative opacity", "airspace disease"],
            &[],
        ),
        rule("pulmonary edema", &["pulmonary edema", "vascular congestion"], &[]),
        rule("edema", &["edema"], &[]),
        rule("fracture", &["fracture", "fractures", "rib fracture"], &[]),
        rule("acute fracture", &["acute fracture"], &[]),
        rule("lung nodule or mass", &["nodule", "nodular opacity", "pulmonary mass"], &[]),
        rule("lung lesion", &["lung lesion", "cavitary lesion"], &[]),
        rule(
            "groundglass opacity",
            &["groundglass opacity", "ground glass opacity", "ground glass opacities"],
            &[],
        ),
        rule(
            "interstitial lung disease",
            &["interstitial lung disease", "interstitial markings"],
            &[],
        ),
        rule("pneumonia", &["pneumonia", "infectious process"], &[]),
        rule("lung opacity", &["opacity", "opacities", "airspace opacity"], &[]),
        rule(
            "pleural effusion",
            &["pleural effusion", "effusion", "effusions"],
            &["pericardial effusion"],
        ),
        rule(
            "pleural abnormality",
            &["pleural thickening", "pleural abnormality"],
            &[],
        ),
        rule("pleural other", &["pleural plaque"], &[]),
        rule("pneumothorax", &["pneumothorax", "ptx", "pneumothoraces"], &[]),
    ];

    let grouping_entries: [(&str, &[&str]); 20] = [
        ("enlarged cardiomediastinum", &[AMC]),
        ("abnormal mediastinal contour", &[AMC]),
        ("atelectasis", &[ATELECTASIS, OPACITY]),
        ("cardiomegaly", &[ECS]),
        ("enlarged cardiac silhouette", &[ECS]),
        ("consolidation", &[CONSOLIDATION, OPACITY]),
        ("pulmonary edema", &[EDEMA, OPACITY]),
        ("edema", &[EDEMA, OPACITY]),
        ("fracture", &[FRACTURE]),
        ("acute fracture", &[FRACTURE]),
        ("lung nodule or mass", &[LUNG_LESION, OPACITY]),
        ("lung lesion", &[LUNG_LESION]),
        ("groundglass opacity", &[OPACITY]),
        ("interstitial lung disease", &[OPACITY]),
        ("pneumonia", &[OPACITY]),
        ("lung opacity", &[OPACITY]),
        ("pleural effusion", &[PLEURAL_ABNORMALITY]),
        ("pleural abnormality", &[PLEURAL_ABNORMALITY]),
        ("pleural other", &[PLEURAL_ABNORMALITY]),
        ("pneumothorax", &[PNEUMOTHORAX]),
    ];
    let grouping = grouping_entries
        .iter()
        .map(|(raw, targets)| {
            (
                raw.to_string(),
                targets.iter().map(|t| LabelId::new(*t)).collect(),
            )
        })
        .collect();

    let rules = RuleSet {
        labels: rules,
        negation_window: 6,
        grouping,
        uncertain_as_positive: true,
    };
    rules.validate().expect("default rules are valid");
    rules
}
