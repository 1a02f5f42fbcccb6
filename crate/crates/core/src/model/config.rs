use serde::{Deserialize, Serialize};

use crate::corpus::DEFAULT_MAX_LEN;
use crate::Error;

/// Network dimensions and ablation switches.
///
/// `Default` gives the full-size configuration (300-d embeddings, 4 layers
/// of 600 hidden units per direction); `num_aspects` and `num_classes`
/// default to zero and must be filled from the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_emb: usize,
    /// Hidden units per direction.
    pub d_hidden: usize,
    pub encoder_layers: usize,
    /// Factor dimension of the factorization machine.
    pub fm_factors: usize,
    pub num_aspects: usize,
    pub num_classes: usize,
    /// Width of the global attention projection; `d_hidden` when unset.
    pub d_attn: Option<usize>,
    /// Width of the classifier's hidden layer; `d_hidden` when unset.
    pub d_classifier: Option<usize>,
    /// Width of the overall-rating embedding.
    pub d_or: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub use_overall_rating: bool,
    pub use_deliberation: bool,
    pub use_feature_enrichment: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_emb: 300,
            d_hidden: 600,
            encoder_layers: 4,
            fm_factors: 10,
            num_aspects: 0,
            num_classes: 0,
            d_attn: None,
            d_classifier: None,
            d_or: 50,
            dropout_rate: 0.2,
            max_len: DEFAULT_MAX_LEN,
            use_overall_rating: true,
            use_deliberation: true,
            use_feature_enrichment: true,
        }
    }
}

impl ModelConfig {
    pub fn attn_width(&self) -> usize {
        self.d_attn.unwrap_or(self.d_hidden)
    }

    pub fn classifier_width(&self) -> usize {
        self.d_classifier.unwrap_or(self.d_hidden)
    }

    /// Width of one direction's state after enrichment.
    pub fn state_width(&self) -> usize {
        self.d_hidden + if self.use_feature_enrichment { 3 } else { 0 }
    }

    /// Width of an aggregated hidden state `h_t`.
    pub fn hidden_width(&self) -> usize {
        2 * self.state_width()
    }

    pub fn classifier_input(&self) -> usize {
        self.hidden_width() + if self.use_overall_rating { self.d_or } else { 0 }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let dims = [
            ("d_emb", self.d_emb),
            ("d_hidden", self.d_hidden),
            ("encoder_layers", self.encoder_layers),
            ("fm_factors", self.fm_factors),
            ("num_aspects", self.num_aspects),
            ("num_classes", self.num_classes),
            ("d_attn", self.attn_width()),
            ("d_classifier", self.classifier_width()),
            ("d_or", self.d_or),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model dimension {name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }
}
