use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("node set is empty")]
    EmptyNodeSet,

    /// The quantity is not defined for the given input.
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("shape mismatch: expected length {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("interpolation matrix is ill-conditioned (condition estimate {estimate:.3e})")]
    Conditioning { estimate: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("PGM parse error at byte offset {offset}: {message}")]
    Pgm { offset: usize, message: String },

    #[error("state is not stabilizable (approximate value below floor {floor:e})")]
    NotStabilizable { floor: f64 },

    #[error("every control leads outside the stabilizable set")]
    DeadEnd,

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the command line drivers.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) | Error::Domain(_) | Error::Shape { .. } => 2,
            Error::Io(_) | Error::Pgm { .. } => 4,
            _ => 3,
        }
    }
}
