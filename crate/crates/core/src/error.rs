//! Crate-wide error type.

/// Errors surfaced by the library.
///
/// Shape mismatches and empty classes are reported eagerly so callers never
/// see silently broadcast or NaN-poisoned results.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two arguments disagree on a dimension (rows, classes, embedding width).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A class required by the computation has no samples.
    #[error("class {class} has no samples ({context})")]
    EmptyClass { class: usize, context: &'static str },

    /// A non-finite value appeared where the computation requires finiteness.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The training loop produced a non-finite loss and aborted.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// Checkpoint or report I/O failed.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A serialised artefact could not be parsed.
    #[error("malformed artefact: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for the pervasive "rows of `a` must match rows of `b`" checks.
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
