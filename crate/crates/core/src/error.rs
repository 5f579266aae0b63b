use thiserror::Error;

/// Errors raised by the identification toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid model or experiment configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violated an operation precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A simulated state left the admissible envelope or became non-finite.
    #[error("simulation diverged at t = {time:.6} s: {state} = {value:e}")]
    Diverged {
        time: f64,
        state: String,
        value: f64,
    },

    /// No usable data is left to estimate from.
    #[error("estimation impossible: {0}")]
    EstimationImpossible(String),

    /// The normal matrix of a least-squares problem is (numerically) singular.
    #[error("ill-conditioned normal matrix (condition number {condition:e})")]
    IllConditioned { condition: f64 },

    /// Evaluation at a singular point.
    #[error("singular evaluation: {0}")]
    Singular(String),

    /// A covariance or gain computation failed at a frequency bin.
    #[error("numerical failure at bin {bin}: {reason}")]
    Numerical { bin: usize, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed trace or table file.
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
