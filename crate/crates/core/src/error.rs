use thiserror::Error;

/// Errors surfaced by the statistical pipeline.
#[derive(Debug, Error)]
pub enum UptError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("t2 radicand is negative ({radicand}); lower K or enable clamping")]
    NegativeRadicand { radicand: f64 },

    #[error("no marginal statistics exceed t1 = {t1}; choose a smaller screening threshold")]
    NoExceedances { t1: f64 },

    #[error("component of size {size} exceeds the cleaning cap {cap}; separability after screening failed")]
    ComponentTooLarge { size: usize, cap: usize },

    #[error("singular Gram block on component {0:?}")]
    SingularGram(Vec<usize>),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, UptError>;

impl UptError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        UptError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        UptError::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
