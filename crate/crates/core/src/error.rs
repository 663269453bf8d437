use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("operation requires a periodic grid")]
    NonPeriodicGrid,

    #[error("mode set ({mx}, {my}) outside bounds for a {nx}x{ny} grid")]
    ModeBounds {
        mx: usize,
        my: usize,
        nx: usize,
        ny: usize,
    },

    #[error("non-finite value encountered at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("relative error undefined: reference field has zero norm")]
    ZeroNorm,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("training diverged (non-finite loss or gradient) at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("missing forward cache")]
    MissingCache,

    #[error("format error: {0}")]
    Format(String),

    #[error("checksum mismatch in section {0}")]
    Checksum(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::ShapeMismatch(_) => "shape-mismatch",
            Error::NonPeriodicGrid => "non-periodic-grid",
            Error::ModeBounds { .. } => "mode-bounds",
            Error::NonFinite { .. } => "non-finite",
            Error::NoConvergence { .. } => "no-convergence",
            Error::ZeroNorm => "zero-norm",
            Error::Empty(_) => "empty",
            Error::Diverged { .. } => "diverged",
            Error::MissingCache => "missing-cache",
            Error::Format(_) => "format",
            Error::Checksum(_) => "checksum",
            Error::Version { .. } => "version",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
