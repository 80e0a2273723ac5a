use std::path::PathBuf;

use thiserror::Error;

use crate::rng::SampleKey;
use crate::sid::StreamIds;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite sample output at {0:?}")]
    NonFiniteSample(SampleKey),

    #[error("non-finite iterate at iteration {iteration}")]
    NonFiniteIterate { iteration: usize },

    #[error("iterate norm {norm:e} exceeded the divergence guard at iteration {iteration}")]
    Diverged { iteration: usize, norm: f64 },

    #[error("inadmissible step-size schedule: {0}")]
    InadmissibleSchedule(String),

    #[error("contraction modulus q = {0} must lie in [0, 1)")]
    NotContraction(f64),

    #[error("1 - q = {0:e} is below the overflow guard")]
    DenominatorTooSmall(f64),

    #[error("non-finite hypergradient estimate (t = {t}, k = {k}, master seed {master_seed}, streams {streams:?})")]
    NonFiniteEstimate {
        t: usize,
        k: usize,
        master_seed: u64,
        streams: StreamIds,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from bad user input (configuration, arguments,
    /// malformed files) rather than a failure during computation.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::InadmissibleSchedule(_)
                | Error::Format { .. }
                | Error::Parse { .. }
                | Error::Config(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
