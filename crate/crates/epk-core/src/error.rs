//! Error type shared across the crate.

/// Unified error for model construction, training, trajectory IO, and
/// reconstruction. Variants carry enough context to identify the failing
/// op/step/component without a debugger.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/graph operand shapes are incompatible.
    #[error("{op}: shape mismatch ({details})")]
    ShapeMismatch { op: &'static str, details: String },

    /// Token id fed to an embedding lookup is outside the vocabulary.
    #[error("token id {token} out of vocabulary (vocab size {vocab})")]
    TokenOutOfVocab { token: usize, vocab: usize },

    /// A component name was requested that the parameter registry does not
    /// define.
    #[error("unknown component '{name}' (known: {known})")]
    UnknownComponent { name: String, known: String },

    /// The parameter registry does not tile the parameter vector exactly.
    #[error("invalid component registry: {0}")]
    InvalidRegistry(String),

    /// An optimizer update produced a non-finite parameter or state value.
    #[error("non-finite value in optimizer update at step {step}")]
    NonFinite { step: usize },

    /// A step index outside the recorded trajectory was requested.
    #[error("step {step} not in trajectory (recorded steps 0..={last})")]
    MissingStep { step: usize, last: usize },

    /// Configuration failed validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A serialized artifact does not match the expected format.
    #[error("format error: expected {expected}, found {found}")]
    Format { expected: String, found: String },

    /// Input data (CSV dataset, indices) failed validation.
    #[error("invalid data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Helper for shape errors: `Error::shape("matmul", format!(...))`.
    pub fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}
