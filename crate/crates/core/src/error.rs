use thiserror::Error;

/// Failure modes shared by every stage of the estimator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
    #[error("deflation inconsistency: {0}")]
    Deflation(String),
    #[error("subspace exhausted: {0}")]
    Exhausted(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numerical,
    Assumption,
    Sampling,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Dimension(_) | Error::Input(_) => ErrorKind::Input,
            Error::Numerical(_) | Error::Deflation(_) | Error::Exhausted(_) => ErrorKind::Numerical,
            Error::Assumption(_) => ErrorKind::Assumption,
            Error::Sampling(_) => ErrorKind::Sampling,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
