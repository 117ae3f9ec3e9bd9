use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: row {row}: {message}")]
    Parse { path: PathBuf, row: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("subject id {0:?} appears in both the ODB and the RCT")]
    Disjointness(String),

    #[error("subject {0:?} has no propensity score")]
    MissingPropensity(String),

    #[error("subject {0:?} has no prognostic score")]
    MissingPrognostic(String),

    #[error("{0}")]
    MissingPotentialOutcomes(String),

    /// A stratum lacks the subjects needed for a plug-in moment estimate.
    /// Callers fall back to the other data source.
    #[error("insufficient arm in stratum: {0}")]
    InsufficientArm(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("stratum {stratum} has positive weight but no defined {method} estimate; merge strata or change the fallback policy")]
    UndefinedStratum { stratum: String, method: String },

    #[error("model fit failed: {0}")]
    Fit(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::Validation(_)
                | Error::Disjointness(_)
                | Error::MissingPropensity(_)
                | Error::MissingPrognostic(_)
                | Error::MissingPotentialOutcomes(_)
        )
    }
}
