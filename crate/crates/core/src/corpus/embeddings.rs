use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Vocabulary, PAD};
use crate::autograd::{Real, Tensor};

/// Word vectors indexed like a [`Vocabulary`]. Frozen during training.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix<T = f32> {
    pub table: Tensor<T>,
    pub trainable: bool,
    /// Fraction of indexed words that had a pretrained vector.
    pub coverage: f64,
}

impl<T: Real> EmbeddingMatrix<T> {
    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn rows(&self, ids: &[usize]) -> Tensor<T> {
        let d = self.dim();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(self.table.row_slice(i));
        }
        Tensor::new(ids.len(), d, data)
    }

    pub fn cast<U: Real>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix { table: self.table.cast(), trainable: self.trainable, coverage: self.coverage }
    }
}

fn random_table(vocab: &Vocabulary, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(vocab.len() * dim);
    for row in 0..vocab.len() {
        for _ in 0..dim {
            let v = rng.gen_range(-0.1f32..=0.1f32);
            data.push(if row == PAD { 0.0 } else { v });
        }
    }
    data
}

/// Embeddings with every row sampled uniformly in `[-0.1, 0.1]` (padding
/// row zero).
pub fn random_embeddings(vocab: &Vocabulary, dim: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix {
        table: Tensor::new(vocab.len(), dim, random_table(vocab, dim, seed)),
        trainable: false,
        coverage: 0.0,
    }
}

/// Reads `word v1 .. vd` lines, keeping only words in `vocab`.
pub fn read_embeddings<R: BufRead>(reader: R, vocab: &Vocabulary) -> Result<(usize, HashMap<usize, Vec<f32>>), CorpusError> {
    let mut dim = None;
    let mut found = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io { path: Default::default(), source })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|p| p.parse::<f32>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Format { line: i + 1, message: e.to_string() })?;
        match dim {
            None if values.is_empty() => {
                return Err(CorpusError::Format { line: i + 1, message: "word without vector".into() })
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(CorpusError::Format {
                    line: i + 1,
                    message: format!("vector width {} differs from {d}", values.len()),
                })
            }
            _ => {}
        }
        if vocab.contains(word) {
            found.entry(vocab.id(word)).or_insert(values);
        }
    }
    let dim = dim.ok_or(CorpusError::Format { line: 0, message: "no vectors in file".into() })?;
    Ok((dim, found))
}

/// Builds the embedding matrix for `vocab` from a text vector file. Words
/// missing from the file get seeded uniform rows in `[-0.1, 0.1]`.
pub fn load_pretrained_embeddings(path: &Path, vocab: &Vocabulary, seed: u64) -> Result<EmbeddingMatrix, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io { path: path.to_owned(), source })?;
    let (dim, found) = read_embeddings(BufReader::new(file), vocab)?;
    let mut data = random_table(vocab, dim, seed);
    for (&id, values) in &found {
        data[id * dim..(id + 1) * dim].copy_from_slice(values);
    }
    let indexed = vocab.len().saturating_sub(2).max(1);
    let coverage = found.len() as f64 / indexed as f64;
    log::info!("pretrained vectors cover {:.1}% of the vocabulary", 100.0 * coverage);
    Ok(EmbeddingMatrix { table: Tensor::new(vocab.len(), dim, data), trainable: false, coverage })
}
