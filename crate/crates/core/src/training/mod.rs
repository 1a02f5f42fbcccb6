//! Adam training with step decay, global-norm clipping and dev-set model
//! selection.

mod metrics;
mod optim;
mod trainer;

pub use metrics::{evaluate, score_predictions, AspectMetrics, MetricsReport};
pub use optim::{adam_step, clip_gradients, global_norm, schedule_lr, AdamState};
pub use trainer::{
    continue_training, mean_loss, review_gradients, split_examples, train, write_history, EpochRecord, TrainOutcome,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Epochs between decays.
    pub decay_every: usize,
    /// Global L2 norm threshold.
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Also evaluate the training loss in eval mode after every epoch.
    pub track_train_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.0005,
            decay_factor: 0.8,
            decay_every: 2,
            clip_threshold: 2.0,
            batch_size: 32,
            max_epochs: 10,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            track_train_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr {} must be positive", self.initial_lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor {} outside (0, 1]", self.decay_factor));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return bad("decay_every and batch_size must be positive".into());
        }
        if !(self.clip_threshold > 0.0) {
            return bad(format!("clip_threshold {} must be positive", self.clip_threshold));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        Ok(())
    }
}
