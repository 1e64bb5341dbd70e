use thiserror::Error;

/// Errors raised while building or solving an SBM problem.
#[derive(Debug, Error)]
pub enum SbmError {
    #[error("level set returned NaN at ({0}, {1})")]
    NanLevelSet(f64, f64),

    #[error("level set gradient vanishes at ({0}, {1})")]
    DegenerateGradient(f64, f64),

    #[error("closest-point projection did not converge from ({0}, {1})")]
    ProjectionFailed(f64, f64),

    #[error("singular matrix: zero pivot in column {column}")]
    SingularMatrix { column: usize },

    #[error("singular local matrix on patch centered at vertex {vertex}")]
    SingularPatch { vertex: usize },

    #[error("dense factorization of dimension {dim} exceeds cap {cap}")]
    DenseTooLarge { dim: usize, cap: usize },

    #[error("inconsistent transfer entry at row {row}, column {col}: {first} vs {second}")]
    InconsistentTransfer {
        row: usize,
        col: usize,
        first: f64,
        second: f64,
    },

    #[error("NaN encountered in {0}")]
    NotANumber(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SbmError>;
