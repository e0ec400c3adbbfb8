use thiserror::Error;

pub type Result<T> = std::result::Result<T, NsvmError>;

#[derive(Debug, Error)]
pub enum NsvmError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("non-finite activation produced by layer {layer} ({kind})")]
    NonFiniteActivation { layer: usize, kind: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("gram block is identically zero")]
    ZeroGram,

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("training data must contain both labels -1 and 1")]
    SingleClass,

    #[error("numeric failure at step {step}: {reason}")]
    NumericFailure { step: usize, reason: String },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("malformed IDX file: {0}")]
    Idx(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("model variant mismatch: expected {expected}, found {found}")]
    VariantMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NsvmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NsvmError::InvalidArgument(msg.into())
    }
}
