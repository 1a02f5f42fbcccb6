//! Multi-aspect review corpora: data model, line-delimited JSON ingestion,
//! vocabulary, pretrained embeddings, splitting and synthetic generation.

mod embeddings;
mod io;
mod split;
mod synth;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use embeddings::{load_pretrained_embeddings, random_embeddings, read_embeddings, EmbeddingMatrix};
pub use io::{load_corpus, parse_corpus, write_corpus, SchemaConfig};
pub use split::split_dataset;
pub use synth::{generate_synthetic_corpus, SyntheticSpec};
pub use vocab::{build_vocabulary, Vocabulary, PAD, UNK};

/// Default cap on tokens per review; longer reviews keep their first tokens.
pub const DEFAULT_MAX_LEN: usize = 400;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("review {id}: {message}")]
    Schema { id: String, message: String },
    #[error("review {id}: rating {value} outside scale {min}..={max}")]
    Range { id: String, value: i64, min: i64, max: i64 },
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("synthetic spec: {0}")]
    Spec(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, dev or test)")),
        }
    }
}

/// Inclusive integer rating range. Class index `c` stands for rating
/// `min + c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: i64,
    pub max: i64,
}

impl RatingScale {
    pub fn new(min: i64, max: i64) -> Self {
        assert!(min <= max, "empty rating scale {min}..={max}");
        Self { min, max }
    }

    pub fn num_classes(&self) -> usize {
        (self.max - self.min + 1) as usize
    }

    pub fn rating(&self, class: usize) -> i64 {
        self.min + class as i64
    }

    pub fn class(&self, rating: i64) -> Option<usize> {
        (self.min..=self.max).contains(&rating).then(|| (rating - self.min) as usize)
    }
}

/// One tokenized review with a class label per aspect.
#[derive(Clone, Debug, PartialEq)]
pub struct Review {
    pub id: String,
    pub tokens: Vec<String>,
    pub pos_tags: Option<Vec<String>>,
    /// 0-based class index per aspect.
    pub aspect_labels: Vec<usize>,
    pub overall_rating: Option<usize>,
    pub split: Option<Split>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub aspect_names: Vec<String>,
    pub scale: RatingScale,
}

impl Corpus {
    pub fn num_aspects(&self) -> usize {
        self.aspect_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.scale.num_classes()
    }

    pub fn split(&self, split: Split) -> Vec<&Review> {
        self.reviews.iter().filter(|r| r.split == Some(split)).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.reviews.iter().filter(|r| r.split == Some(split)).count()
    }

    pub fn has_pos_tags(&self) -> bool {
        !self.reviews.is_empty() && self.reviews.iter().all(|r| r.pos_tags.is_some())
    }

    /// Checks every review against the corpus shape.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let (k, n) = (self.num_aspects(), self.num_classes());
        for r in &self.reviews {
            let fail = |message: String| Err(CorpusError::Schema { id: r.id.clone(), message });
            if r.tokens.is_empty() {
                return fail("review has no tokens".into());
            }
            if let Some(pos) = &r.pos_tags {
                if pos.len() != r.tokens.len() {
                    return fail(format!("{} POS tags for {} tokens", pos.len(), r.tokens.len()));
                }
            }
            if r.aspect_labels.len() != k {
                return fail(format!("{} labels, corpus has {k} aspects", r.aspect_labels.len()));
            }
            if let Some(&c) = r.aspect_labels.iter().chain(&r.overall_rating).find(|&&c| c >= n) {
                return fail(format!("class index {c} outside {n} classes"));
            }
        }
        Ok(())
    }
}
