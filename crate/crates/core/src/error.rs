use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("stationarity violated: infinity norm {norm} must be below 1")]
    NonStationary { norm: f64 },

    #[error("singular or ill-conditioned system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("equation for unit {unit} failed: {source}")]
    Equation {
        unit: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// True for failures caused by the numbers rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonStationary { .. } | Error::Singular(_) | Error::Numerical(_) => true,
            Error::Equation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
