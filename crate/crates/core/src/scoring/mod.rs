//! Free-text response scoring.
//!
//! Cleaned responses are compared with the ground-truth label through three
//! cosine similarities: whole-sentence (`cs`), action term (`cs_a`) and
//! object terms (`cs_o`). They combine as
//! `s_sim = cs - (cs_o * p_pen)^2 + (cs_a * b_bon)^2` and a response is correct
//! when `s_sim > theta`. The constants have no defaults; fit them with
//! [`calibrate::grid_search`] against manually labeled responses.

pub mod calibrate;
pub mod clean;
pub mod spell;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{normalize_key, EmbeddingTable, ResponseRecord, TrialKind, VERB_CLASSES};
use crate::tree::NodeId;
use clean::Cleaned;
use spell::SymSpell;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("invalid scoring config: {0}")]
    Config(String),
    #[error("no {kind} embedding for `{text}`")]
    MissingEmbedding { kind: &'static str, text: String },
    #[error("node {0} has no main-trial responses")]
    Undefined(NodeId),
}

pub const DEFAULT_ARTICLES: [&str; 3] = ["a", "an", "the"];
pub const DEFAULT_GENERIC_SUBJECTS: [&str; 16] = [
    "man", "woman", "person", "someone", "somebody", "people", "guy", "lady", "he", "she", "they",
    "i", "you", "we", "it", "someones",
];

fn default_articles() -> Vec<String> {
    DEFAULT_ARTICLES.iter().map(|s| s.to_string()).collect()
}

fn default_subjects() -> Vec<String> {
    DEFAULT_GENERIC_SUBJECTS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_distance() -> usize {
    2
}

fn default_max_words() -> usize {
    3
}

/// Verb classes and their regular inflections.
pub fn default_verb_lexicon() -> Vec<String> {
    let mut out = BTreeSet::new();
    for v in VERB_CLASSES {
        out.insert(v.to_string());
        let stem = v.strip_suffix('e').unwrap_or(v);
        out.insert(format!("{stem}ing"));
        out.insert(format!("{v}s"));
        out.insert(format!("{v}es"));
        out.insert(format!("{stem}ed"));
    }
    for extra in [
        "cutting", "putting", "taking", "took", "put", "cut", "opened", "closed", "turned",
        "poured",
    ] {
        out.insert(extra.to_string());
    }
    out.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    pub p_pen: f64,
    pub b_bon: f64,
    pub theta: f64,
    #[serde(default = "default_articles")]
    pub article_list: Vec<String>,
    #[serde(default = "default_subjects")]
    pub generic_subject_list: Vec<String>,
    #[serde(default = "default_distance")]
    pub spell_max_edit_distance: usize,
    #[serde(default = "default_verb_lexicon")]
    pub verb_lexicon: Vec<String>,
    #[serde(default = "default_max_words")]
    pub max_content_words: usize,
}

impl ScoringConfig {
    pub fn new(p_pen: f64, b_bon: f64, theta: f64) -> Self {
        Self {
            p_pen,
            b_bon,
            theta,
            article_list: default_articles(),
            generic_subject_list: default_subjects(),
            spell_max_edit_distance: default_distance(),
            verb_lexicon: default_verb_lexicon(),
            max_content_words: default_max_words(),
        }
    }

    /// `s_sim` is bounded by `[-1 - p_pen^2, 1 + b_bon^2]`; a threshold
    /// outside that range classifies everything the same way.
    pub fn validate(&self) -> Result<(), ScoringError> {
        for (name, v) in [("p_pen", self.p_pen), ("b_bon", self.b_bon)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScoringError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        let lo = -1.0 - self.p_pen.powi(2);
        let hi = 1.0 + self.b_bon.powi(2);
        if !(self.theta >= lo && self.theta < hi) {
            return Err(ScoringError::Config(format!(
                "theta {} lies outside the achievable range [{lo}, {hi})",
                self.theta
            )));
        }
        Ok(())
    }

    pub fn stop_words(&self) -> BTreeSet<String> {
        self.article_list
            .iter()
            .chain(&self.generic_subject_list)
            .map(|w| w.to_lowercase())
            .collect()
    }
}

pub fn s_sim(cs: f64, cs_a: f64, cs_o: f64, p_pen: f64, b_bon: f64) -> f64 {
    cs - (cs_o * p_pen).powi(2) + (cs_a * b_bon).powi(2)
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    NeedsManualReview,
    EmptyAfterCleaning,
    NoObjectTerm,
    EarlyResponse,
}

impl Flag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Flag::NeedsManualReview => "needs_manual_review",
            Flag::EmptyAfterCleaning => "empty_after_cleaning",
            Flag::NoObjectTerm => "no_object_term",
            Flag::EarlyResponse => "early_response",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub participant_id: String,
    pub node_id: NodeId,
    pub trial_kind: TrialKind,
    pub cleaned_text: String,
    /// Similarities are absent when the response was empty after cleaning.
    pub cs: Option<f64>,
    pub cs_a: Option<f64>,
    pub cs_o: Option<f64>,
    pub s_sim: Option<f64>,
    pub correct: bool,
    pub flags: BTreeSet<Flag>,
}

/// Term split of a cleaned phrase: first lexicon verb (or first token) plus
/// the remaining tokens as object terms.
pub fn split_terms<'a>(
    tokens: &'a [String],
    lexicon: &BTreeSet<String>,
) -> Option<(&'a str, Vec<&'a str>)> {
    if tokens.is_empty() {
        return None;
    }
    let vi = tokens.iter().position(|t| lexicon.contains(t)).unwrap_or(0);
    let objects = tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != vi)
        .map(|(_, t)| t.as_str())
        .collect();
    Some((tokens[vi].as_str(), objects))
}

/// Embedding lookup for scoring.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub sentence: EmbeddingTable,
    pub word: EmbeddingTable,
}

impl Embeddings {
    fn sentence(&self, text: &str) -> Result<&[f64], ScoringError> {
        self.sentence
            .get(text)
            .ok_or_else(|| ScoringError::MissingEmbedding {
                kind: "sentence",
                text: normalize_key(text),
            })
    }

    fn word(&self, w: &str) -> Result<&[f64], ScoringError> {
        self.word
            .get(w)
            .ok_or_else(|| ScoringError::MissingEmbedding {
                kind: "word",
                text: w.to_string(),
            })
    }

    fn mean_words(&self, words: &[&str]) -> Result<Vec<f64>, ScoringError> {
        let mut acc = vec![0.0; self.word.dim()];
        for w in words {
            for (a, x) in acc.iter_mut().zip(self.word(w)?) {
                *a += x;
            }
        }
        let n = words.len() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

/// Reusable scoring state: config, stop words, lexicon and speller.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub config: ScoringConfig,
    stop_words: BTreeSet<String>,
    lexicon: BTreeSet<String>,
    speller: Option<SymSpell>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarities {
    pub cs: f64,
    pub cs_a: f64,
    pub cs_o: f64,
    pub s_sim: f64,
    pub no_object_term: bool,
}

impl Scorer {
    /// Dictionary words that would not survive tokenization unchanged are
    /// dropped so that corrections are stable under re-cleaning.
    pub fn new(
        config: ScoringConfig,
        dictionary: Option<&BTreeMap<String, u64>>,
    ) -> Result<Self, ScoringError> {
        config.validate()?;
        let speller = dictionary.map(|d| {
            let usable: BTreeMap<String, u64> = d
                .iter()
                .filter(|(w, _)| clean::tokenize(w) == [w.to_string()])
                .map(|(w, c)| (w.clone(), *c))
                .collect();
            SymSpell::new(&usable, config.spell_max_edit_distance)
        });
        Ok(Self {
            stop_words: config.stop_words(),
            lexicon: config
                .verb_lexicon
                .iter()
                .map(|w| w.to_lowercase())
                .collect(),
            speller,
            config,
        })
    }

    pub fn clean(&self, raw: &str) -> Cleaned {
        clean::clean(raw, &self.stop_words, self.speller.as_ref())
    }

    /// Similarities between a cleaned response and the ground-truth label.
    pub fn similarities(
        &self,
        cleaned: &Cleaned,
        gt_label: &str,
        emb: &Embeddings,
    ) -> Result<Similarities, ScoringError> {
        let gt = clean::clean(gt_label, &self.stop_words, None);
        let cs = cosine(emb.sentence(&cleaned.text())?, emb.sentence(&gt.text())?);
        let (rv, ro) = split_terms(&cleaned.tokens, &self.lexicon).expect("non-empty response");
        let (gv, go) = split_terms(&gt.tokens, &self.lexicon).ok_or_else(|| {
            ScoringError::Config(format!(
                "ground-truth label `{gt_label}` is empty after cleaning"
            ))
        })?;
        let cs_a = cosine(emb.word(rv)?, emb.word(gv)?);
        let (cs_o, no_object_term) = if ro.is_empty() || go.is_empty() {
            (0.0, true)
        } else {
            (cosine(&emb.mean_words(&ro)?, &emb.mean_words(&go)?), false)
        };
        Ok(Similarities {
            cs,
            cs_a,
            cs_o,
            s_sim: s_sim(cs, cs_a, cs_o, self.config.p_pen, self.config.b_bon),
            no_object_term,
        })
    }

    pub fn score(
        &self,
        response: &ResponseRecord,
        gt_label: &str,
        emb: &Embeddings,
    ) -> Result<ScoredResponse, ScoringError> {
        let cleaned = self.clean(&response.raw_text);
        let mut flags = BTreeSet::new();
        let mut out = ScoredResponse {
            participant_id: response.participant_id.clone(),
            node_id: response.node_id.clone(),
            trial_kind: response.trial_kind,
            cleaned_text: cleaned.text(),
            cs: None,
            cs_a: None,
            cs_o: None,
            s_sim: None,
            correct: false,
            flags: BTreeSet::new(),
        };
        if cleaned.is_empty() {
            flags.insert(Flag::EmptyAfterCleaning);
            out.flags = flags;
            return Ok(out);
        }
        if cleaned.tokens.len() > self.config.max_content_words {
            flags.insert(Flag::NeedsManualReview);
        }
        let sims = self.similarities(&cleaned, gt_label, emb)?;
        if sims.no_object_term {
            flags.insert(Flag::NoObjectTerm);
        }
        out.cs = Some(sims.cs);
        out.cs_a = Some(sims.cs_a);
        out.cs_o = Some(sims.cs_o);
        out.s_sim = Some(sims.s_sim);
        out.correct = sims.s_sim > self.config.theta;
        out.flags = flags;
        Ok(out)
    }
}

/// Batch result: scored responses plus those excluded for missing embeddings.
#[derive(Debug, Clone, Default)]
pub struct ScoredBatch {
    pub scored: Vec<ScoredResponse>,
    pub excluded: Vec<(ResponseRecord, ScoringError)>,
}

pub fn score_all(
    scorer: &Scorer,
    responses: &[ResponseRecord],
    gt_label: impl Fn(&NodeId) -> Option<String>,
    emb: &Embeddings,
) -> ScoredBatch {
    let mut batch = ScoredBatch::default();
    for r in responses {
        let Some(gt) = gt_label(&r.node_id) else {
            batch.excluded.push((
                r.clone(),
                ScoringError::Config(format!("no ground-truth label for node {}", r.node_id)),
            ));
            continue;
        };
        match scorer.score(r, &gt, emb) {
            Ok(s) => batch.scored.push(s),
            Err(e) => batch.excluded.push((r.clone(), e)),
        }
    }
    batch
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Share of correct main-trial responses.
pub fn node_accuracy<'a>(
    node: &NodeId,
    responses: impl IntoIterator<Item = &'a ScoredResponse>,
) -> Result<NodeAccuracy, ScoringError> {
    let (mut correct, mut total) = (0usize, 0usize);
    for r in responses {
        if r.trial_kind == TrialKind::Main && &r.node_id == node {
            total += 1;
            correct += usize::from(r.correct);
        }
    }
    if total == 0 {
        return Err(ScoringError::Undefined(node.clone()));
    }
    Ok(NodeAccuracy {
        correct,
        total,
        accuracy: correct as f64 / total as f64,
    })
}

/// Per-node accuracies over main trials, skipping excluded participants.
pub fn accuracies_by_node(
    responses: &[ScoredResponse],
    excluded_participants: &BTreeSet<String>,
) -> BTreeMap<NodeId, NodeAccuracy> {
    let mut tallies: BTreeMap<NodeId, (usize, usize)> = BTreeMap::new();
    for r in responses {
        if r.trial_kind != TrialKind::Main || excluded_participants.contains(&r.participant_id) {
            continue;
        }
        let t = tallies.entry(r.node_id.clone()).or_default();
        t.0 += usize::from(r.correct);
        t.1 += 1;
    }
    tallies
        .into_iter()
        .map(|(id, (c, n))| {
            (
                id,
                NodeAccuracy {
                    correct: c,
                    total: n,
                    accuracy: c as f64 / n as f64,
                },
            )
        })
        .collect()
}
