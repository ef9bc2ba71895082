use thiserror::Error;

/// Errors surfaced by the segmentation lab.
#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation contract was violated (e.g. backward on a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// A forward pass produced NaN/Inf.
    #[error("non-finite values in {site}")]
    NonFinite { site: String },

    /// Invalid model/run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// On-disk artifact malformed (raster, checkpoint, ...).
    #[error("format error: {0}")]
    Format(String),

    /// Input data violates a precondition (zero variance, non-finite pixels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// Training aborted on a non-finite loss; the partial epoch log is preserved.
    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        record: Box<crate::trainer::RunRecord>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
