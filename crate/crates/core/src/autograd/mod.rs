//! Minimal reverse-mode automatic differentiation over dense matrices.

mod check;
mod dropout;
mod tape;
mod tensor;

pub use check::{finite_difference_check, GradCheck};
pub use dropout::{apply_dropout, dropout_mask, Mode};
pub use tape::{argmax, softmax_rows, Tape, Var};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum AutogradError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}
