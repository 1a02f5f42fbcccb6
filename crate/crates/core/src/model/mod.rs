//! The multi-aspect network: highway embedding, bidirectional encoder,
//! feature enrichment, global and deliberate attention per aspect, overall
//! rating fusion and per-aspect classifiers.

mod checkpoint;
mod config;
mod forward;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Manifest, TensorEntry, FORMAT_VERSION};
pub use config::ModelConfig;
pub use forward::{
    batch_loss, build_review, forward, forward_many, predict, read_trace, review_loss, AspectGraph, AspectTrace, ForwardTrace,
    Lexicon, ModelInput, ReviewGraph,
};
pub use layers::Dropout;
pub use params::{AspectIds, Bound, FedarParams, FmIds, HighwayIds, Layout, LstmIds, ParamGroup, ParamId, ParamKind, ParamSpec};
