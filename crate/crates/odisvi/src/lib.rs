//! Black-box variational inference with overdispersed importance
//! sampling.
//!
//! The crate maximizes the ELBO of a probabilistic model by stochastic
//! ascent on mean-field exponential-family variational parameters, using
//! score-function (REINFORCE) gradient estimates with
//! Rao-Blackwellization and control variates. Estimator variance is
//! reduced further by importance sampling each latent variable from an
//! overdispersed member of its own family, with per-variable dispersion
//! coefficients adapted online by descending the estimator variance.
//!
//! Modules:
//! - [`expfam`]: Gaussian / gamma / Poisson factors, scores, moments,
//!   overdispersion maps, importance weights, unconstrained transform.
//! - [`model`]: the model interface plus a conjugate Gaussian toy, a
//!   gamma-normal time series, and a Poisson deep exponential family.
//! - [`estimator`]: the shared score-function / importance-sampled
//!   gradient estimator.
//! - [`dispersion`]: dispersion-coefficient adaptation.
//! - [`optimizer`]: AdaGrad ascent loop in unconstrained space.
//! - [`trace`] / [`compare`]: run traces, CSV persistence, comparisons.

pub mod compare;
pub mod dispersion;
pub mod error;
pub mod estimator;
pub mod expfam;
pub mod model;
pub mod optimizer;
pub mod rng;
pub mod trace;

pub use error::{Error, Result};
pub use rng::RandomStream;
