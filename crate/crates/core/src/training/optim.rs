use crate::autograd::{Real, Tensor};
use crate::model::FedarParams;
use crate::{Error, Result};

use super::TrainConfig;

/// `initial_lr * decay_factor^floor(epoch / decay_every)`, by repeated
/// multiplication.
pub fn schedule_lr(epoch: usize, config: &TrainConfig) -> f64 {
    let mut lr = config.initial_lr;
    for _ in 0..epoch / config.decay_every {
        lr *= config.decay_factor;
    }
    lr
}

pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt()
}

/// Rescales every gradient by `threshold / norm` when the global L2 norm
/// exceeds `threshold`. Returns the norm before clipping.
pub fn clip_gradients<T: Real>(grads: &mut [Tensor<T>], threshold: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > threshold {
        let s = T::from_f64_lossy(threshold / norm);
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }
    norm
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &FedarParams<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update. Fails, before touching anything, if a
/// gradient is non-finite or misshapen.
pub fn adam_step<T: Real>(
    params: &mut FedarParams<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "{} gradients and {} moment tensors for {} parameters",
            grads.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.tensors()[i].shape() {
            return Err(Error::Contract(format!("gradient of {} has shape {:?}", params.name(i), g.shape())));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(params.name(i).to_owned()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (config.beta1, config.beta2, config.epsilon);
    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
    for (i, p) in params.tensors_mut().iter_mut().enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            let g = grads[i].data()[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * g;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * g * g;
            m[j] = T::from_f64_lossy(mj);
            v[j] = T::from_f64_lossy(vj);
            let update = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
            *w = T::from_f64_lossy(w.as_f64() - update);
        }
    }
    Ok(())
}
