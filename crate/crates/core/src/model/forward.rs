use serde::{Deserialize, Serialize};

use super::layers::{self, Attended, Classified, Dropout};
use super::{Bound, FedarParams, Layout};
use crate::autograd::{argmax, Real, Tape, Tensor, Var};
use crate::corpus::{EmbeddingMatrix, Review, Vocabulary};
use crate::{Error, Result};

/// Word index and frozen word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon<T = f32> {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingMatrix<T>,
}

/// Network input for one review.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    /// `T x d_emb` base embeddings.
    pub embedded: Tensor<T>,
    /// Overall-rating class, if known.
    pub overall: Option<usize>,
}

impl<T: Real> Lexicon<T> {
    /// Encodes a review, keeping its first `max_len` tokens.
    pub fn input(&self, review: &Review, max_len: usize) -> Result<ModelInput<T>> {
        let keep = review.tokens.len().min(max_len);
        let ids = self.vocab.encode(&review.tokens[..keep]);
        self.input_from_ids(&ids, review.overall_rating)
    }

    pub fn input_from_ids(&self, ids: &[usize], overall: Option<usize>) -> Result<ModelInput<T>> {
        if ids.is_empty() {
            return Err(Error::Contract("review has no tokens".into()));
        }
        let rows = self.embeddings.table.rows();
        if let Some(bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Contract(format!("token id {bad} outside an embedding table of {rows} rows")));
        }
        Ok(ModelInput { embedded: self.embeddings.rows(ids), overall })
    }

    pub fn cast<U: Real>(&self) -> Lexicon<U> {
        Lexicon { vocab: self.vocab.clone(), embeddings: self.embeddings.cast() }
    }
}

/// Tape variables for one aspect.
#[derive(Clone, Copy, Debug)]
pub struct AspectGraph {
    pub global: Attended,
    pub deliberate: Option<Attended>,
    /// `s = s_G + s_D`
    pub repr: Var,
    /// Classifier input before dropout.
    pub features: Var,
    pub classified: Classified,
}

/// Tape variables for one review.
#[derive(Clone, Debug)]
pub struct ReviewGraph {
    pub embedded: Var,
    pub hidden: Var,
    pub aspects: Vec<AspectGraph>,
}

/// Appends the full network for one review to `tape`. With `dropout`, the
/// classifier inputs are dropped out stochastically.
pub fn build_review<T: Real>(
    tape: &mut Tape<'_, T>,
    layout: &Layout,
    bound: &Bound,
    input: &ModelInput<T>,
    mut dropout: Option<Dropout<'_>>,
) -> Result<ReviewGraph> {
    let cfg = &layout.config;
    if input.embedded.cols() != cfg.d_emb {
        return Err(Error::Contract(format!(
            "embedding width {} differs from d_emb {}",
            input.embedded.cols(),
            cfg.d_emb
        )));
    }
    let e = tape.constant(input.embedded.clone())?;
    let embedded = layers::highway(tape, bound, &layout.highway, e)?;
    let (hf, hb) = layers::encode(tape, bound, &layout.encoder, embedded)?;
    let hidden = match &layout.fm {
        Some([fm_f, fm_b]) => {
            let ef = layers::enrich(tape, bound, fm_f, hf)?;
            let eb = layers::enrich(tape, bound, fm_b, hb)?;
            tape.concat_cols(&[ef, eb])?
        }
        None => tape.concat_cols(&[hf, hb])?,
    };
    let overall_row = match layout.overall {
        Some(table) => {
            let n = cfg.num_classes;
            let row = match input.overall {
                Some(c) if c >= n => {
                    return Err(Error::Contract(format!("overall rating class {c} outside {n} classes")))
                }
                Some(c) => c,
                None => n,
            };
            Some(tape.gather_rows(bound.get(table), &[row])?)
        }
        None => None,
    };
    let mut aspects = Vec::with_capacity(layout.aspects.len());
    for ids in &layout.aspects {
        let global = layers::global_attention(tape, bound, ids, hidden)?;
        let (deliberate, repr) = match ids.deliberate {
            Some(wd) => {
                let d = layers::deliberate_attention(tape, bound, wd, hidden, global.pooled)?;
                (Some(d), tape.add(global.pooled, d.pooled)?)
            }
            None => (None, global.pooled),
        };
        let features = match overall_row {
            Some(row) => tape.concat_cols(&[repr, row])?,
            None => repr,
        };
        let classified = layers::classify(tape, bound, ids, features, dropout.as_mut())?;
        aspects.push(AspectGraph { global, deliberate, repr, features, classified });
    }
    Ok(ReviewGraph { embedded, hidden, aspects })
}

/// Cross-entropy summed over aspects for one review.
pub fn review_loss<T: Real>(tape: &mut Tape<'_, T>, graph: &ReviewGraph, labels: &[usize]) -> Result<Var> {
    if labels.len() != graph.aspects.len() {
        return Err(Error::Contract(format!(
            "{} labels for {} aspects",
            labels.len(),
            graph.aspects.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (a, &y) in graph.aspects.iter().zip(labels) {
        let p = tape.select(a.classified.probs, 0, y)?;
        let lp = tape.ln_clamped(p, 1e-12)?;
        total = Some(match total {
            Some(t) => tape.sub(t, lp)?,
            None => tape.scale(lp, -1.0)?,
        });
    }
    total.ok_or_else(|| Error::Contract("model has no aspects".into()))
}

/// Mean over `batch` of the per-review loss, built on one tape with
/// dropout off.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    layout: &Layout,
    bound: &Bound,
    batch: &[(ModelInput<T>, Vec<usize>)],
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (input, labels) in batch {
        let g = build_review(tape, layout, bound, input, None)?;
        let l = review_loss(tape, &g, labels)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    Ok(tape.scale(total, 1.0 / batch.len() as f64)?)
}

/// Activations of one aspect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectTrace {
    pub alpha_global: Vec<f64>,
    /// Absent when deliberation is disabled.
    pub alpha_deliberate: Option<Vec<f64>>,
    pub s_global: Vec<f64>,
    pub s_deliberate: Option<Vec<f64>>,
    pub repr: Vec<f64>,
    /// Scores before the output softmax.
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AspectTrace {
    /// `(alpha_G + alpha_D) / 2`, or `alpha_G` without deliberation.
    pub fn accumulated(&self) -> Vec<f64> {
        match &self.alpha_deliberate {
            Some(d) => self.alpha_global.iter().zip(d).map(|(g, d)| 0.5 * (g + d)).collect(),
            None => self.alpha_global.clone(),
        }
    }

    /// Most probable class; ties go to the lowest index.
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

/// Per-review activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Highway output, one row per token.
    pub embedded: Vec<Vec<f64>>,
    /// Aggregated hidden states `h_t`.
    pub hidden: Vec<Vec<f64>>,
    pub aspects: Vec<AspectTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.aspects.iter().map(AspectTrace::predicted).collect()
    }
}

fn rows_f64<T: Real>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row_slice(r).iter().map(|v| v.as_f64()).collect()).collect()
}

fn flat<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    t.to_f64_vec()
}

/// Reads a built graph back into a [`ForwardTrace`].
pub fn read_trace<T: Real>(tape: &Tape<'_, T>, graph: &ReviewGraph) -> ForwardTrace {
    ForwardTrace {
        embedded: rows_f64(tape.value(graph.embedded)),
        hidden: rows_f64(tape.value(graph.hidden)),
        aspects: graph
            .aspects
            .iter()
            .map(|a| AspectTrace {
                alpha_global: flat(tape.value(a.global.alpha)),
                alpha_deliberate: a.deliberate.map(|d| flat(tape.value(d.alpha))),
                s_global: flat(tape.value(a.global.pooled)),
                s_deliberate: a.deliberate.map(|d| flat(tape.value(d.pooled))),
                repr: flat(tape.value(a.repr)),
                logits: flat(tape.value(a.classified.logits)),
                probs: flat(tape.value(a.classified.probs)),
            })
            .collect(),
    }
}

/// Eval-mode forward pass.
pub fn forward<T: Real>(params: &FedarParams<T>, input: &ModelInput<T>) -> Result<ForwardTrace> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false)?;
    let graph = build_review(&mut tape, params.layout(), &bound, input, None)?;
    Ok(read_trace(&tape, &graph))
}

/// Per-aspect labels (argmax, ties toward the lowest class) and the trace.
pub fn predict<T: Real>(params: &FedarParams<T>, input: &ModelInput<T>) -> Result<(Vec<usize>, ForwardTrace)> {
    let trace = forward(params, input)?;
    Ok((trace.labels(), trace))
}

/// Eval-mode traces for many reviews, in input order. Reviews are run in
/// parallel.
pub fn forward_many<T: Real>(
    params: &FedarParams<T>,
    lexicon: &Lexicon<T>,
    reviews: &[&Review],
) -> Result<Vec<ForwardTrace>> {
    use rayon::prelude::*;
    let max_len = params.config().max_len;
    reviews
        .par_iter()
        .map(|r| forward(params, &lexicon.input(r, max_len)?))
        .collect()
}
