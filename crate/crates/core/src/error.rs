use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("did not converge: {0}")]
    NonConvergence(String),
    #[error("truncation too small: {0}")]
    Truncation(String),
    #[error("precision exhausted: {0}")]
    Precision(String),
    #[error("outside the certified domain: {0}")]
    Domain(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Coarse failure classes, used by the command-line front end for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorClass {
    Config,
    Convergence,
    Invariant,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_) | Error::Domain(_) => ErrorClass::Config,
            Error::NonConvergence(_) | Error::Truncation(_) | Error::Precision(_) => {
                ErrorClass::Convergence
            }
            Error::Invariant(_) => ErrorClass::Invariant,
        }
    }
}
