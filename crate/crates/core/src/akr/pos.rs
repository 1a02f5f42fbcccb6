use std::collections::{BTreeMap, HashMap};

use super::AttentionIndex;

/// One tag per word type: its most frequent tag, ties going to the tag that
/// is rarer over the whole corpus (then to the lexicographically smaller).
#[derive(Clone, Debug, PartialEq)]
pub struct PosTable {
    tags: HashMap<String, String>,
}

impl PosTable {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut per_word: HashMap<&str, BTreeMap<&str, usize>> = HashMap::new();
        let mut global: HashMap<&str, usize> = HashMap::new();
        for (w, t) in pairs {
            *per_word.entry(w).or_default().entry(t).or_default() += 1;
            *global.entry(t).or_default() += 1;
        }
        let tags = per_word
            .into_iter()
            .map(|(w, counts)| {
                let best = counts
                    .iter()
                    .max_by(|a, b| {
                        a.1.cmp(b.1)
                            .then_with(|| global[b.0].cmp(&global[a.0]))
                            .then_with(|| b.0.cmp(a.0))
                    })
                    .map(|(t, _)| t.to_string())
                    .expect("word has at least one tag");
                (w.to_owned(), best)
            })
            .collect();
        Self { tags }
    }

    pub fn from_index(index: &AttentionIndex) -> Self {
        Self::from_pairs(index.reviews.iter().flat_map(|r| {
            let tags = r.pos_tags.as_deref().unwrap_or(&[]);
            r.tokens.iter().zip(tags).map(|(w, t)| (w.as_str(), t.as_str()))
        }))
    }

    pub fn tag(&self, word: &str) -> Option<&str> {
        self.tags.get(word).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_then_rarer_tag() {
        let t = PosTable::from_pairs([
            ("run", "VERB"),
            ("run", "VERB"),
            ("run", "NOUN"),
            ("light", "ADJ"),
            ("light", "NOUN"),
            ("lamp", "NOUN"),
        ]);
        assert_eq!(t.tag("run"), Some("VERB"));
        // NOUN occurs 3 times overall, ADJ once
        assert_eq!(t.tag("light"), Some("ADJ"));
        assert_eq!(t.tag("missing"), None);
    }
}
