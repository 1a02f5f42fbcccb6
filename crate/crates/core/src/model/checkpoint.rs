use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FedarParams, Lexicon, ModelConfig};
use crate::autograd::Tensor;
use crate::corpus::{EmbeddingMatrix, RatingScale, Vocabulary};
use crate::fsutil::{read_to_string, write_atomic};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32-le";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";
const VOCAB: &str = "vocab.json";
const EMBEDDING: &str = "embedding";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub dtype: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub aspect_names: Vec<String>,
    pub scale: RatingScale,
    /// Run facts such as the selected epoch and its dev accuracy.
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
    pub tensors: Vec<TensorEntry>,
}

/// A trained model with everything needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: FedarParams<f32>,
    pub lexicon: Lexicon<f32>,
    pub aspect_names: Vec<String>,
    pub scale: RatingScale,
    pub seed: u64,
    pub meta: BTreeMap<String, serde_json::Value>,
}

/// Writes `manifest.json`, `params.bin` and `vocab.json` into `dir`.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    let named = ckpt
        .params
        .tensors()
        .iter()
        .enumerate()
        .map(|(i, t)| (ckpt.params.name(i).to_owned(), t))
        .chain(std::iter::once((EMBEDDING.to_owned(), &ckpt.lexicon.embeddings.table)));
    for (name, t) in named {
        tensors.push(TensorEntry { name, shape: t.shape(), offset: blob.len() });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dtype: DTYPE.into(),
        seed: ckpt.seed,
        config: ckpt.params.config().clone(),
        aspect_names: ckpt.aspect_names.clone(),
        scale: ckpt.scale,
        meta: ckpt.meta.clone(),
        tensors,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    write_atomic(&dir.join(BLOB), &blob)?;
    write_atomic(&dir.join(VOCAB), ckpt.lexicon.vocab.to_json().as_bytes())?;
    write_atomic(&dir.join(MANIFEST), text.as_bytes())?;
    Ok(())
}

fn read_tensor(blob: &[u8], e: &TensorEntry) -> Result<Tensor<f32>> {
    let [rows, cols] = e.shape;
    let end = e.offset + 4 * rows * cols;
    if rows == 0 || cols == 0 || end > blob.len() {
        return Err(Error::Checkpoint(format!("tensor {} lies outside the blob", e.name)));
    }
    let data = blob[e.offset..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Tensor::new(rows, cols, data))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST);
    let manifest: Manifest = serde_json::from_str(&read_to_string(&manifest_path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not the supported {FORMAT_VERSION}",
            manifest.format_version
        )));
    }
    if manifest.dtype != DTYPE {
        return Err(Error::Checkpoint(format!("unsupported dtype {}", manifest.dtype)));
    }
    let blob_path = dir.join(BLOB);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let (emb_entry, param_entries) = manifest
        .tensors
        .split_last()
        .filter(|(last, _)| last.name == EMBEDDING)
        .ok_or_else(|| Error::Checkpoint("manifest does not end with the embedding table".into()))?;
    let params = FedarParams::from_tensors(
        &manifest.config,
        param_entries.iter().map(|e| read_tensor(&blob, e)).collect::<Result<_>>()?,
    )?;
    for (i, e) in param_entries.iter().enumerate() {
        if params.name(i) != e.name {
            return Err(Error::Checkpoint(format!("tensor {i} is {}, expected {}", e.name, params.name(i))));
        }
    }
    let table = read_tensor(&blob, emb_entry)?;
    let vocab_path = dir.join(VOCAB);
    let vocab = Vocabulary::from_json(&read_to_string(&vocab_path)?)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", vocab_path.display())))?;
    if table.rows() != vocab.len() || table.cols() != manifest.config.d_emb {
        return Err(Error::Checkpoint(format!(
            "embedding shape {:?} does not match {} words of width {}",
            table.shape(),
            vocab.len(),
            manifest.config.d_emb
        )));
    }
    Ok(Checkpoint {
        params,
        lexicon: Lexicon { vocab, embeddings: EmbeddingMatrix { table, trainable: false, coverage: 0.0 } },
        aspect_names: manifest.aspect_names,
        scale: manifest.scale,
        seed: manifest.seed,
        meta: manifest.meta,
    })
}
