use thiserror::Error;

use crate::anchors::AnchorError;
use crate::backend::BackendError;
use crate::dataset::DatasetError;
use crate::duality::DualityError;
use crate::scoring::ScoringError;
use crate::selection::SelectionError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Backend,
    Data,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Anchors(#[from] AnchorError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Duality(#[from] DualityError),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dataset(e) => e.kind(),
            Error::Backend(e) => e.kind(),
            Error::Anchors(e) => e.kind(),
            Error::Scoring(e) => e.kind(),
            Error::Selection(e) => e.kind(),
            Error::Duality(_) => ErrorKind::Config,
        }
    }
}
