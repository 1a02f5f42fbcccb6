use std::path::PathBuf;

use crate::autograd::AutogradError;
use crate::corpus::CorpusError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Autograd(#[from] AutogradError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("no reviews with label {label} for aspect {aspect}")]
    EmptySubcorpus { aspect: usize, label: usize },
    #[error("ineligible audience: {0}")]
    Ineligible(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Whether the failure is numeric (divergence, overflow) rather than a
    /// problem with inputs or configuration.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Divergence { .. } | Error::NonFiniteGradient(_) | Error::Autograd(AutogradError::NonFinite { .. })
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
