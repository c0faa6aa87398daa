//! Crate-wide error type.
//!
//! Every fallible public function in this crate returns [`Result`]. Errors
//! carry a machine-greppable class (see [`IkError::class`]) so the CLI can
//! print `error[class]: message` lines and map classes to exit codes.

use std::path::Path;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum IkError {
    /// Caller passed arguments that violate a documented precondition.
    #[error("validation: {0}")]
    Validation(String),

    /// An internal invariant did not hold (e.g. unnormalized coefficients).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or inconsistent run configuration.
    #[error("config: {0}")]
    Config(String),

    /// Checkpoint could not be read, written, or does not match the model.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Problem with input data (frame directories, clip layout, manifests).
    #[error("data: {0}")]
    Data(String),

    /// Training aborted (non-finite loss, resource exhaustion).
    #[error("training: {0}")]
    Training(String),

    /// Filesystem error annotated with the offending path.
    #[error("io: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Error bubbled up from the tensor backend.
    #[error("tensor: {0}")]
    Tensor(#[from] candle_core::Error),

    /// Error decoding or encoding an image.
    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    /// Error reading or writing JSON.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl IkError {
    /// Attach a path to a raw I/O error.
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        IkError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Stable error class used in CLI diagnostics and exit codes.
    pub fn class(&self) -> &'static str {
        match self {
            IkError::Validation(_) => "validation",
            IkError::Contract(_) => "contract",
            IkError::Config(_) => "config",
            IkError::Checkpoint(_) => "checkpoint",
            IkError::Data(_) => "data",
            IkError::Training(_) => "training",
            IkError::Io { .. } => "io",
            IkError::Tensor(_) => "tensor",
            IkError::Image(_) => "image",
            IkError::Json(_) => "json",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, IkError>;

/// Shorthand for a validation error.
pub fn validation(msg: impl Into<String>) -> IkError {
    IkError::Validation(msg.into())
}

/// Shorthand for a contract-violation error.
pub fn contract(msg: impl Into<String>) -> IkError {
    IkError::Contract(msg.into())
}
