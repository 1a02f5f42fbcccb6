//! Keyword ranking from accumulated attention weights.
//!
//! A word's score for aspect `k` is the attention mass it receives across a
//! corpus divided by its corpus frequency plus a smoothing term `gamma`.
//! Opinion keywords apply the same score inside the subcorpus of reviews
//! with a given label.

mod export;
mod pos;

pub use export::{keyword_records, parse_keyword_records, write_keyword_table, KeywordRecord};
pub use pos::PosTable;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::autograd::Real;
use crate::corpus::Review;
use crate::model::{forward_many, FedarParams, Lexicon};
use crate::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 50;

/// One review's tokens and per-aspect accumulated attention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexedReview {
    pub id: String,
    /// Tokens the model saw (after truncation).
    pub tokens: Vec<String>,
    pub pos_tags: Option<Vec<String>>,
    pub labels: Vec<usize>,
    /// `weights[k][t]`
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionIndex {
    pub reviews: Vec<IndexedReview>,
    pub num_aspects: usize,
}

/// Eval-mode forward over `reviews`, storing `(alpha_G + alpha_D) / 2`
/// per token and aspect (`alpha_G` alone without deliberation).
pub fn build_attention_index<T: Real>(
    params: &FedarParams<T>,
    lexicon: &Lexicon<T>,
    reviews: &[&Review],
) -> Result<AttentionIndex> {
    if reviews.is_empty() {
        return Err(Error::Contract("cannot index an empty split".into()));
    }
    let traces = forward_many(params, lexicon, reviews)?;
    let max_len = params.config().max_len;
    let indexed = reviews
        .iter()
        .zip(traces)
        .map(|(r, trace)| {
            let keep = r.tokens.len().min(max_len);
            IndexedReview {
                id: r.id.clone(),
                tokens: r.tokens[..keep].to_vec(),
                pos_tags: r.pos_tags.as_ref().map(|p| p[..keep].to_vec()),
                labels: r.aspect_labels.clone(),
                weights: trace.aspects.iter().map(|a| a.accumulated()).collect(),
            }
        })
        .collect();
    AttentionIndex::new(indexed, params.config().num_aspects)
}

impl AttentionIndex {
    pub fn new(reviews: Vec<IndexedReview>, num_aspects: usize) -> Result<Self> {
        for r in &reviews {
            if r.weights.len() != num_aspects || r.weights.iter().any(|w| w.len() != r.tokens.len()) {
                return Err(Error::Contract(format!("attention weights of {} do not match its tokens", r.id)));
            }
            if r.labels.len() != num_aspects {
                return Err(Error::Contract(format!("{} has {} labels for {num_aspects} aspects", r.id, r.labels.len())));
            }
        }
        Ok(Self { reviews, num_aspects })
    }

    pub fn has_pos_tags(&self) -> bool {
        !self.reviews.is_empty() && self.reviews.iter().all(|r| r.pos_tags.is_some())
    }
}

fn scores_over<'a>(reviews: impl Iterator<Item = &'a IndexedReview>, aspect: usize, gamma: f64) -> BTreeMap<String, f64> {
    let mut mass: HashMap<&str, f64> = HashMap::new();
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for r in reviews {
        for (w, a) in r.tokens.iter().zip(&r.weights[aspect]) {
            *mass.entry(w).or_default() += a;
            *freq.entry(w).or_default() += 1;
        }
    }
    mass.into_iter().map(|(w, m)| (w.to_owned(), m / (freq[w] as f64 + gamma))).collect()
}

fn check(index: &AttentionIndex, aspect: usize, gamma: f64) -> Result<()> {
    if aspect >= index.num_aspects {
        return Err(Error::Contract(format!("aspect {aspect} outside {} aspects", index.num_aspects)));
    }
    if !(gamma > 0.0) {
        return Err(Error::Contract(format!("gamma {gamma} must be positive")));
    }
    Ok(())
}

/// `p(w | k) = sum over reviews of attention on w / (frequency of w + gamma)`
/// for every word of the indexed corpus.
pub fn aspect_keyword_scores(index: &AttentionIndex, aspect: usize, gamma: f64) -> Result<BTreeMap<String, f64>> {
    check(index, aspect, gamma)?;
    Ok(scores_over(index.reviews.iter(), aspect, gamma))
}

/// Aspect scores restricted to the reviews whose gold label for `aspect`
/// is `label`; numerator and denominator both use that subcorpus.
pub fn opinion_keyword_scores(
    index: &AttentionIndex,
    aspect: usize,
    label: usize,
    gamma: f64,
) -> Result<BTreeMap<String, f64>> {
    check(index, aspect, gamma)?;
    let mut sub = index.reviews.iter().filter(|r| r.labels[aspect] == label).peekable();
    if sub.peek().is_none() {
        return Err(Error::EmptySubcorpus { aspect, label });
    }
    Ok(scores_over(sub, aspect, gamma))
}

/// Literal evaluation over the word types of `tokens`: for every word, a
/// loop over reviews and their tokens accumulating attention and counts.
pub fn brute_force_scores(tokens: &[Vec<String>], weights: &[Vec<f64>], gamma: f64) -> BTreeMap<String, f64> {
    let mut words: Vec<&String> = tokens.iter().flatten().collect();
    words.sort();
    words.dedup();
    let mut out = BTreeMap::new();
    for w in words {
        let mut numerator = 0.0;
        let mut frequency = 0.0;
        for (review, alpha) in tokens.iter().zip(weights) {
            for (t, token) in review.iter().enumerate() {
                if token == w {
                    numerator += alpha[t];
                    frequency += 1.0;
                }
            }
        }
        out.insert(w.clone(), numerator / (frequency + gamma));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeywordMode {
    /// Nouns and proper nouns.
    Aspect,
    /// Adjectives, adverbs and verbs.
    Opinion,
}

impl KeywordMode {
    pub fn allowed_tags(self) -> &'static [&'static str] {
        match self {
            KeywordMode::Aspect => &["NOUN", "PROPN"],
            KeywordMode::Opinion => &["ADJ", "ADV", "VERB"],
        }
    }
}

impl std::str::FromStr for KeywordMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "aspect" => Ok(KeywordMode::Aspect),
            "opinion" => Ok(KeywordMode::Opinion),
            other => Err(format!("unknown keyword mode {other:?} (expected aspect or opinion)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedKeyword {
    pub word: String,
    pub score: f64,
    pub pos: Option<String>,
}

/// Ranked words of one aspect, or of one `(aspect, label)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordList {
    pub aspect: usize,
    pub label: Option<usize>,
    pub keywords: Vec<RankedKeyword>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordTable {
    pub mode: KeywordMode,
    pub gamma: f64,
    pub top_k: usize,
    /// False when the corpus had no POS tags and the filter was skipped.
    pub pos_filtered: bool,
    pub lists: Vec<KeywordList>,
}

/// Keeps words whose majority tag suits `mode` (all words when `pos` is
/// `None`), sorts by descending score then ascending word, and truncates to
/// `top_k`.
pub fn rank_keywords(
    scores: &BTreeMap<String, f64>,
    pos: Option<&PosTable>,
    mode: KeywordMode,
    top_k: usize,
) -> Vec<RankedKeyword> {
    let allowed = mode.allowed_tags();
    let mut ranked: Vec<RankedKeyword> = scores
        .iter()
        .filter_map(|(w, &score)| {
            let tag = pos.and_then(|p| p.tag(w)).map(str::to_owned);
            match (pos, &tag) {
                (Some(_), Some(t)) if !allowed.contains(&t.as_str()) => None,
                (Some(_), None) => None,
                _ => Some(RankedKeyword { word: w.clone(), score, pos: tag }),
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.word.cmp(&b.word)));
    ranked.truncate(top_k);
    ranked
}

/// Keyword tables for every aspect (aspect mode) or every observed
/// `(aspect, label)` pair (opinion mode).
pub fn keyword_table(index: &AttentionIndex, mode: KeywordMode, gamma: f64, top_k: usize, num_classes: usize) -> Result<KeywordTable> {
    let pos = if index.has_pos_tags() {
        Some(PosTable::from_index(index))
    } else {
        log::warn!("corpus has no POS tags; keyword ranking is unfiltered");
        None
    };
    let mut lists = Vec::new();
    for k in 0..index.num_aspects {
        match mode {
            KeywordMode::Aspect => {
                let s = aspect_keyword_scores(index, k, gamma)?;
                lists.push(KeywordList { aspect: k, label: None, keywords: rank_keywords(&s, pos.as_ref(), mode, top_k) });
            }
            KeywordMode::Opinion => {
                for label in 0..num_classes {
                    match opinion_keyword_scores(index, k, label, gamma) {
                        Ok(s) => lists.push(KeywordList {
                            aspect: k,
                            label: Some(label),
                            keywords: rank_keywords(&s, pos.as_ref(), mode, top_k),
                        }),
                        Err(Error::EmptySubcorpus { .. }) => {
                            log::warn!("no reviews with label {label} for aspect {k}; list skipped")
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(KeywordTable { mode, gamma, top_k, pos_filtered: pos.is_some(), lists })
}
