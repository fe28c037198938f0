use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: bad subset, out-of-range value, shape mismatch.
    #[error("invalid input: {0}")]
    Input(String),

    /// A distribution or model failed its structural checks.
    #[error("validation failed: {0}")]
    Validation(String),

    /// Enumeration would exceed the configured combinatorial cap.
    #[error("capacity exceeded: {count} subsets > cap {cap}; {advice}")]
    Capacity {
        count: u128,
        cap: u128,
        advice: &'static str,
    },

    /// Brute-force oracle asked to enumerate too many outcomes.
    #[error("instance too large for brute force: K*M = {cells} > {limit}")]
    Size { cells: usize, limit: usize },

    /// Feedback that contradicts the action it was generated from.
    #[error("inconsistent feedback: {0}")]
    Consistency(String),

    /// Nonpositive exponential rate or a parameter outside the positivity domain.
    #[error("model error: {0}")]
    Model(String),

    /// Newton's method did not reach the gradient tolerance.
    #[error("solver did not converge after {iterations} iterations (|grad| = {grad_norm:e})")]
    Solver {
        iterations: usize,
        grad_norm: f64,
        last_iterate: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Wraps an error raised at a specific simulation round.
    #[error("round {round}: {source}")]
    AtRound {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_round(self, round: usize) -> Self {
        Error::AtRound {
            round,
            source: Box::new(self),
        }
    }
}
