//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter vector violates a family invariant (e.g. non-positive variance).
    #[error("invalid {family} parameters: {reason}")]
    InvalidParams { family: &'static str, reason: String },

    /// Evaluation point outside the support of the distribution.
    #[error("value {value} outside the support of {family}")]
    OutOfSupport { family: &'static str, value: f64 },

    /// Dispersion coefficients must satisfy tau >= 1.
    #[error("dispersion coefficient {0} < 1")]
    InvalidDispersion(f64),

    /// An importance weight left the representable range.
    #[error("importance weight overflow at z={z}: log q={log_q}, log mixture={log_mix}")]
    WeightOverflow { z: f64, log_q: f64, log_mix: f64 },

    /// A model evaluation needed a latent value that was not supplied.
    #[error("missing value for latent variable {0}")]
    MissingValue(usize),

    /// Wraps a failure with the latent variable it occurred at.
    #[error("latent variable {latent}: {source}")]
    AtLatent {
        latent: usize,
        #[source]
        source: Box<Error>,
    },

    /// Gradient estimation failed for one latent variable.
    #[error("gradient estimation failed for latent {latent} (tau = {taus:?})")]
    Estimator {
        latent: usize,
        taus: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    /// AdaGrad saw a NaN or infinite gradient entry.
    #[error("non-finite gradient for component {component}")]
    NonFiniteGradient { component: String },

    /// The optimization loop gave up after a retried iteration failed.
    #[error("run aborted at iteration {iteration}")]
    RunAborted {
        iteration: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error("malformed data file: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn at_latent(self, latent: usize) -> Error {
        Error::AtLatent {
            latent,
            source: Box::new(self),
        }
    }
}
