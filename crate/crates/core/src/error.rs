use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:.6e})")]
    NotPositive { eigenvalue: f64 },

    #[error(
        "signal covariance is singular (eigenvalue {eigenvalue:.3e}); restrict the model to the \
         support subspace of S and pass the full-rank block"
    )]
    SingularSignal { eigenvalue: f64 },

    #[error("noise covariance must be either zero or positive definite for this operation")]
    UnsupportedNoise,

    #[error("invalid Fock space: {0}")]
    InvalidSpace(String),

    #[error("mode index {mode} out of range for {modes} modes")]
    InvalidMode { mode: usize, modes: usize },

    #[error("Fock spaces do not match")]
    SpaceMismatch,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid needs {nodes} nodes, budget is {budget}")]
    BudgetExceeded { nodes: usize, budget: usize },

    #[error("point lies outside the grid extent")]
    OutsideGrid,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate sample covariance")]
    DegenerateSamples,

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
        match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(e.to_string()),
            _ => Error::Parse {
                line,
                message: e.to_string(),
            },
        }
    }
}
