use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{row}: {message}", file.display())]
    Data {
        file: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{}: {source}", file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("Newton iteration failed at t={t}, component {component}: {message}")]
    Newton {
        t: usize,
        component: usize,
        message: String,
    },

    #[error("covariance of regime {regime} is singular or not positive definite")]
    SingularCovariance { regime: usize },

    #[error("regressor moment matrix of regime {regime} is rank deficient")]
    RankDeficient { regime: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for failures of a numerical routine, false for bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Newton { .. }
                | Error::SingularCovariance { .. }
                | Error::RankDeficient { .. }
                | Error::Numerical(_)
        )
    }
}
