use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("meshes are not nested: fine cells per side {fine} is not a multiple of coarse {coarse}")]
    NonNested { fine: usize, coarse: usize },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("incompatible spaces: {0}")]
    IncompatibleSpaces(String),

    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite: pivot {pivot:e} at elimination step {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("matrix is singular: zero pivot at elimination step {index}")]
    Singular { index: usize },

    #[error("corrector solve failed for coarse node {node} (over-constrained patch?): {source}")]
    Corrector {
        node: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("time step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("initial data: {0}")]
    InitialData(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("numerical assertion failed: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NonNested { .. } => "non_nested",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::IncompatibleSpaces(_) => "incompatible_spaces",
            Error::NotSymmetric(_) => "not_symmetric",
            Error::NotPositiveDefinite { .. } => "not_positive_definite",
            Error::Singular { .. } => "singular",
            Error::Corrector { .. } => "corrector",
            Error::Step { .. } => "step",
            Error::InitialData(_) => "initial_data",
            Error::Config(_) => "config",
            Error::Parse(_) => "parse",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
