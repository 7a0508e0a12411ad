use thiserror::Error;

pub type Result<T> = std::result::Result<T, DucError>;

#[derive(Debug, Error)]
pub enum DucError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Partial-correlation estimation needs strictly more covariates than sources.
    #[error("need more covariates than sources (K < L), got L = {covariates}, K = {sources}")]
    TooFewCovariates { covariates: usize, sources: usize },

    #[error("degenerate covariance; offending covariates: {columns:?}")]
    DegenerateCovariance { columns: Vec<String> },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("degenerate residual: {0}")]
    DegenerateResidual(String),

    #[error("boundary value: {0}")]
    Boundary(String),

    #[error("no convergence after {iterations} iterations: {context}")]
    NonConvergence { iterations: usize, context: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("data error at line {line}, column {column}: {message}")]
    Data { line: u64, column: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl DucError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        DucError::Parameter(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        DucError::Dimension(msg.into())
    }

    /// Failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            DucError::DegenerateCovariance { .. }
                | DucError::Singular(_)
                | DucError::DegenerateResidual(_)
                | DucError::Boundary(_)
                | DucError::NonConvergence { .. }
        )
    }

    /// Failures caused by malformed input data.
    pub fn is_data(&self) -> bool {
        matches!(
            self,
            DucError::Data { .. }
                | DucError::Csv(_)
                | DucError::Io(_)
                | DucError::EmptyDataset(_)
                | DucError::Dimension(_)
        )
    }
}
