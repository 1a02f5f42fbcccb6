use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricsReport};
use super::optim::{adam_step, clip_gradients, schedule_lr, AdamState};
use super::TrainConfig;
use crate::autograd::{AutogradError, Tape, Tensor};
use crate::corpus::{Corpus, Split};
use crate::model::{build_review, review_loss, Dropout, FedarParams, Lexicon, ModelConfig, ModelInput};
use crate::seeds::rng_for;
use crate::{Error, Result};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_DROPOUT: u64 = 3;

/// One epoch of the metrics history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean mini-batch loss seen during the epoch (dropout on).
    pub train_loss: f64,
    /// Training-split loss after the epoch, in eval mode.
    pub train_eval_loss: Option<f64>,
    pub dev: MetricsReport,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best averaged dev accuracy.
    pub params: FedarParams<f32>,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn best_dev_accuracy(&self) -> Option<f64> {
        self.best_epoch.map(|e| self.history[e].dev.accuracy)
    }
}

/// Loss and per-parameter gradients of one review. `dropout` is
/// `(rate, seed)` for the classifier-input mask.
pub fn review_gradients(
    params: &FedarParams<f32>,
    input: &ModelInput<f32>,
    labels: &[usize],
    dropout: Option<(f64, u64)>,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true)?;
    let mut rng = dropout.map(|(_, seed)| rng_for(seed, &[]));
    let drop = match (&mut rng, dropout) {
        (Some(r), Some((rate, _))) if rate > 0.0 => Some(Dropout { rate, rng: r }),
        _ => None,
    };
    let graph = build_review(&mut tape, params.layout(), &bound, input, drop)?;
    let loss = review_loss(&mut tape, &graph, labels)?;
    let value = tape.value(loss).get(0, 0) as f64;
    tape.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(v, p)| tape.take_grad(*v).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())))
        .collect();
    Ok((value, grads))
}

/// Forward, backward, clip and Adam update for one mini-batch. Reviews are
/// differentiated in parallel and their gradients summed in batch order.
/// Returns the mean loss.
pub(crate) fn train_step(
    params: &mut FedarParams<f32>,
    state: &mut AdamState<f32>,
    batch: &[(&ModelInput<f32>, &[usize])],
    lr: f64,
    config: &TrainConfig,
    dropout_seed: u64,
) -> Result<f64> {
    let rate = params.config().dropout_rate;
    let snapshot: &FedarParams<f32> = params;
    let results: Vec<Result<(f64, Vec<Tensor<f32>>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, (input, labels))| {
            let seed = crate::seeds::derive_seed(dropout_seed, &[i as u64]);
            review_gradients(snapshot, input, labels, Some((rate, seed)))
        })
        .collect();
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0;
    let mut sum: Option<Vec<Tensor<f32>>> = None;
    for r in results {
        let (loss, grads) = r?;
        total += loss;
        match &mut sum {
            None => sum = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
                }
            }
        }
    }
    let mut grads = sum.ok_or_else(|| Error::Contract("empty batch".into()))?;
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|x| *x *= scale);
    }
    let mean = total / batch.len() as f64;
    if !mean.is_finite() {
        return Err(Error::Divergence { epoch: 0, batch: 0, loss: mean });
    }
    clip_gradients(&mut grads, config.clip_threshold);
    adam_step(params, &grads, state, lr, config)?;
    Ok(mean)
}

/// Mean eval-mode loss over `examples`.
pub fn mean_loss(params: &FedarParams<f32>, examples: &[(ModelInput<f32>, Vec<usize>)]) -> Result<f64> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|(input, labels)| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape, false)?;
            let g = build_review(&mut tape, params.layout(), &bound, input, None)?;
            let l = review_loss(&mut tape, &g, labels)?;
            Ok(tape.value(l).get(0, 0) as f64)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

fn at(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Divergence { loss, .. } => Error::Divergence { epoch, batch, loss },
        Error::Autograd(AutogradError::NonFinite { .. }) => Error::Divergence { epoch, batch, loss: f64::NAN },
        other => other,
    }
}

/// Runs `batches` consecutive mini-batches drawn from `examples` in a
/// seeded order, continuing from `params`. Used to derive perturbed copies
/// of a trained model.
pub fn continue_training(
    params: &mut FedarParams<f32>,
    examples: &[(ModelInput<f32>, Vec<usize>)],
    batches: usize,
    lr: f64,
    config: &TrainConfig,
    seed: u64,
) -> Result<()> {
    if examples.is_empty() || batches == 0 {
        return Ok(());
    }
    let mut state = AdamState::new(params);
    let mut order: Vec<usize> = Vec::new();
    let mut rng = rng_for(seed, &[STREAM_SHUFFLE]);
    let mut pass = 0u64;
    for b in 0..batches {
        if order.len() < config.batch_size.min(examples.len()) {
            let mut fresh: Vec<usize> = (0..examples.len()).collect();
            fresh.shuffle(&mut rng);
            order.extend(fresh);
            pass += 1;
        }
        let take: Vec<usize> = order.drain(..config.batch_size.min(examples.len())).collect();
        let batch: Vec<(&ModelInput<f32>, &[usize])> =
            take.iter().map(|&i| (&examples[i].0, examples[i].1.as_slice())).collect();
        let dropout_seed = crate::seeds::derive_seed(seed, &[STREAM_DROPOUT, pass, b as u64]);
        train_step(params, &mut state, &batch, lr, config, dropout_seed).map_err(|e| at(e, 0, b))?;
    }
    Ok(())
}

fn examples(
    lexicon: &Lexicon<f32>,
    corpus: &Corpus,
    split: Split,
    max_len: usize,
) -> Result<Vec<(ModelInput<f32>, Vec<usize>)>> {
    corpus
        .split(split)
        .into_iter()
        .map(|r| Ok((lexicon.input(r, max_len)?, r.aspect_labels.clone())))
        .collect()
}

/// Encodes a split for [`mean_loss`] and [`continue_training`].
pub fn split_examples(
    lexicon: &Lexicon<f32>,
    corpus: &Corpus,
    split: Split,
    max_len: usize,
) -> Result<Vec<(ModelInput<f32>, Vec<usize>)>> {
    examples(lexicon, corpus, split, max_len)
}

/// Trains from a seeded initialization and keeps the parameters of the
/// epoch with the highest averaged dev accuracy (earliest on ties).
pub fn train(
    corpus: &Corpus,
    lexicon: &Lexicon<f32>,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if model.num_aspects != corpus.num_aspects() || model.num_classes != corpus.num_classes() {
        return Err(Error::Config(format!(
            "model expects {} aspects x {} classes, corpus has {} x {}",
            model.num_aspects,
            model.num_classes,
            corpus.num_aspects(),
            corpus.num_classes()
        )));
    }
    if lexicon.embeddings.dim() != model.d_emb {
        return Err(Error::Config(format!(
            "embedding width {} differs from d_emb {}",
            lexicon.embeddings.dim(),
            model.d_emb
        )));
    }
    let train_set = examples(lexicon, corpus, Split::Train, model.max_len)?;
    let dev = corpus.split(Split::Dev);
    if train_set.is_empty() || dev.is_empty() {
        return Err(Error::Contract("training needs nonempty train and dev splits".into()));
    }

    let mut params = FedarParams::<f32>::init(model, crate::seeds::derive_seed(config.seed, &[STREAM_INIT]))?;
    let mut state = AdamState::new(&params);
    let mut best = params.clone();
    let mut best_epoch: Option<usize> = None;
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut shuffle_rng = rng_for(config.seed, &[STREAM_SHUFFLE]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..config.max_epochs {
        let lr = schedule_lr(epoch, config);
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(&ModelInput<f32>, &[usize])> =
                chunk.iter().map(|&i| (&train_set[i].0, train_set[i].1.as_slice())).collect();
            let seed = crate::seeds::derive_seed(config.seed, &[STREAM_DROPOUT, epoch as u64, b as u64]);
            let loss = train_step(&mut params, &mut state, &batch, lr, config, seed).map_err(|e| at(e, epoch, b))?;
            total += loss;
            batches += 1;
        }
        let train_eval_loss = if config.track_train_loss { Some(mean_loss(&params, &train_set)?) } else { None };
        let dev_report = evaluate(&params, lexicon, &dev, &corpus.scale, &corpus.aspect_names)?;
        log::info!(
            "epoch {epoch}: lr {lr:.6} loss {:.4} dev acc {:.4} mse {:.4}",
            total / batches as f64,
            dev_report.accuracy,
            dev_report.mse
        );
        let improved = best_epoch.map_or(true, |e: usize| dev_report.accuracy > history_acc(&history, e));
        history.push(EpochRecord { epoch, lr, train_loss: total / batches as f64, train_eval_loss, dev: dev_report });
        if improved {
            best = params.clone();
            best_epoch = Some(epoch);
        }
    }
    Ok(TrainOutcome { params: best, best_epoch, history })
}

fn history_acc(history: &[EpochRecord], epoch: usize) -> f64 {
    history[epoch].dev.accuracy
}

/// One JSON object per epoch.
pub fn write_history<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    for rec in history {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
