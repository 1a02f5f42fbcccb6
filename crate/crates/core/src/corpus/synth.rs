use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, RatingScale, Review};

/// Recipe for a planted-keyword corpus.
///
/// For every `(aspect, class)` cell, `reviews_per_cell` reviews are drawn
/// with that aspect fixed to that class and every other aspect uniform.
/// A review is the concatenation of one segment per aspect; each segment
/// slot holds a noise word with probability `noise_rate`, otherwise a
/// keyword of the segment's `(aspect, label)` list. Each segment carries at
/// least one keyword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub aspects: Vec<String>,
    pub classes: usize,
    /// `keywords[aspect][class]`
    pub keywords: Vec<Vec<Vec<String>>>,
    pub reviews_per_cell: usize,
    /// Inclusive token-count range of a whole review.
    pub length_range: [usize; 2],
    pub noise_rate: f64,
    #[serde(default)]
    pub noise_vocab: Vec<String>,
    /// Put the aspect segments of each review in a seeded random order
    /// instead of aspect order.
    #[serde(default)]
    pub shuffle_segments: bool,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(text).map_err(|e| CorpusError::Spec(e.to_string()))
    }

    fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Spec(m));
        let k = self.aspects.len();
        if k == 0 || self.classes == 0 {
            return err("need at least one aspect and one class".into());
        }
        if self.keywords.len() != k {
            return err(format!("keywords lists cover {} aspects, expected {k}", self.keywords.len()));
        }
        let [lo, hi] = self.length_range;
        if lo < k || lo > hi {
            return err(format!("length range {lo}..={hi} must be ordered and at least the aspect count {k}"));
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return err(format!("noise rate {} outside [0, 1)", self.noise_rate));
        }
        if self.noise_rate > 0.0 && self.noise_vocab.is_empty() {
            return err("noise rate is positive but noise_vocab is empty".into());
        }
        let mut seen: HashSet<&str> = self.noise_vocab.iter().map(String::as_str).collect();
        for (a, per_class) in self.keywords.iter().enumerate() {
            if per_class.len() != self.classes {
                return err(format!("aspect {a} has {} keyword lists, expected {}", per_class.len(), self.classes));
            }
            for (c, words) in per_class.iter().enumerate() {
                if words.is_empty() {
                    return err(format!("empty keyword list for aspect {a}, class {c}"));
                }
                for w in words {
                    if !seen.insert(w) {
                        return err(format!("keyword {w:?} is not unique across cells and noise"));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generates the corpus described by `spec`. Output order is a seeded
/// shuffle; ids follow that order. No splits are assigned.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<Corpus, CorpusError> {
    spec.validate()?;
    let k = spec.aspects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labelings = Vec::with_capacity(k * spec.classes * spec.reviews_per_cell);
    for aspect in 0..k {
        for class in 0..spec.classes {
            for _ in 0..spec.reviews_per_cell {
                let labels: Vec<usize> = (0..k)
                    .map(|a| if a == aspect { class } else { rng.gen_range(0..spec.classes) })
                    .collect();
                labelings.push(labels);
            }
        }
    }
    labelings.shuffle(&mut rng);

    let [lo, hi] = spec.length_range;
    let reviews = labelings
        .into_iter()
        .enumerate()
        .map(|(i, labels)| {
            let len = rng.gen_range(lo..=hi);
            let mut tokens = Vec::with_capacity(len);
            let mut order: Vec<usize> = (0..k).collect();
            if spec.shuffle_segments {
                order.shuffle(&mut rng);
            }
            for (slot, &a) in order.iter().enumerate() {
                let label = labels[a];
                let seg = len / k + usize::from(slot < len % k);
                let words = &spec.keywords[a][label];
                let start = tokens.len();
                let mut planted = false;
                for _ in 0..seg {
                    if rng.gen::<f64>() < spec.noise_rate {
                        tokens.push(spec.noise_vocab.choose(&mut rng).expect("validated").clone());
                    } else {
                        tokens.push(words.choose(&mut rng).expect("validated").clone());
                        planted = true;
                    }
                }
                if !planted {
                    let slot = start + rng.gen_range(0..seg);
                    tokens[slot] = words.choose(&mut rng).expect("validated").clone();
                }
            }
            Review {
                id: format!("syn-{i:06}"),
                tokens,
                pos_tags: None,
                aspect_labels: labels,
                overall_rating: None,
                split: None,
            }
        })
        .collect();

    Ok(Corpus {
        reviews,
        aspect_names: spec.aspects.clone(),
        scale: RatingScale::new(1, spec.classes as i64),
    })
}
