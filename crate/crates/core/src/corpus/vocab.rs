use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Corpus;

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word index with reserved padding and unknown entries, plus the raw
/// corpus frequency of every word seen (including those below the
/// threshold).
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
    freq: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    words: Vec<(String, usize)>,
}

impl Vocabulary {
    fn from_words(indexed: Vec<(String, usize)>, freq: HashMap<String, usize>) -> Self {
        let mut words = vec!["<pad>".to_owned(), "<unk>".to_owned()];
        let mut index = HashMap::with_capacity(indexed.len());
        for (w, _) in indexed {
            index.insert(w.clone(), words.len());
            words.push(w);
        }
        Self { words, index, freq }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    /// Index of `word`, or [`UNK`].
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// Indexed words in index order, without the reserved entries.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words.iter().enumerate().skip(2).map(|(i, w)| (i, w.as_str()))
    }

    pub fn frequency(&self, word: &str) -> usize {
        self.freq.get(word).copied().unwrap_or(0)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_json(&self) -> String {
        let words = self.words().map(|(_, w)| (w.to_owned(), self.frequency(w))).collect();
        serde_json::to_string(&Stored { words }).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let stored: Stored = serde_json::from_str(text)?;
        let freq = stored.words.iter().cloned().collect();
        Ok(Self::from_words(stored.words, freq))
    }
}

/// Indexes every word with frequency at least `min_freq`, most frequent
/// first and lexicographically within equal frequency.
pub fn build_vocabulary(corpus: &Corpus, min_freq: usize) -> Vocabulary {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for r in &corpus.reviews {
        for t in &r.tokens {
            *freq.entry(t.clone()).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> =
        freq.iter().filter(|(_, &f)| f >= min_freq).map(|(w, &f)| (w.clone(), f)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_words(kept, freq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RatingScale, Review};

    fn corpus(tokens: &[&str]) -> Corpus {
        Corpus {
            reviews: vec![Review {
                id: "x".into(),
                tokens: tokens.iter().map(|s| s.to_string()).collect(),
                pos_tags: None,
                aspect_labels: vec![0],
                overall_rating: None,
                split: None,
            }],
            aspect_names: vec!["a".into()],
            scale: RatingScale::new(1, 2),
        }
    }

    #[test]
    fn frequency_order() {
        let v = build_vocabulary(&corpus(&["b", "a", "a"]), 1);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn threshold_keeps_frequencies() {
        let v = build_vocabulary(&corpus(&["a", "a", "b"]), 2);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.frequency("b"), 1);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocabulary(&corpus(&["b", "a"]), 1);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
    }

    #[test]
    fn json_round_trip() {
        let v = build_vocabulary(&corpus(&["x", "y", "y", "z"]), 1);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }
}
