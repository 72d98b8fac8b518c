//! Probabilistic-model interface and the three bundled models.
//!
//! A [`Model`] exposes its latent variables, their Markov blankets, the
//! full log-joint, and per-variable local log-joints (the sum of exactly
//! the terms that depend on one latent). Estimators only ever touch the
//! model through this trait.

pub mod corpus;
pub mod def;
pub mod gnts;
pub mod toy;

use crate::error::{Error, Result};
use crate::expfam::FamilyParams;

/// Dense index of one latent variable, stable for the lifetime of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatentVarId(pub usize);

/// View of a latent assignment: a base vector plus an optional single-value
/// override, so estimators can re-evaluate one variable without copying.
/// Entries set to NaN are treated as missing.
#[derive(Debug, Clone, Copy)]
pub struct Assignment<'a> {
    base: &'a [f64],
    patch: Option<(usize, f64)>,
}

impl<'a> Assignment<'a> {
    pub fn new(base: &'a [f64]) -> Self {
        Assignment { base, patch: None }
    }

    pub fn with_patch(base: &'a [f64], id: LatentVarId, value: f64) -> Self {
        Assignment {
            base,
            patch: Some((id.0, value)),
        }
    }

    /// Value of latent `id`; a NaN entry means the caller did not supply
    /// this variable, which is a contract violation.
    pub fn value(&self, id: LatentVarId) -> Result<f64> {
        let v = match self.patch {
            Some((i, v)) if i == id.0 => v,
            _ => self.base[id.0],
        };
        if v.is_nan() {
            Err(Error::MissingValue(id.0))
        } else {
            Ok(v)
        }
    }
}

/// A probabilistic model with mean-field variational factors.
pub trait Model: Sync {
    fn num_latents(&self) -> usize;

    /// Latents in the Markov blanket of `n` (never contains `n` itself).
    fn blanket(&self, n: LatentVarId) -> Vec<LatentVarId>;

    /// log p(x, z) for a complete in-support assignment.
    fn log_joint(&self, z: &[f64]) -> Result<f64>;

    /// Sum of the log-joint terms that depend on latent `n`; only reads
    /// `n` and its blanket from the assignment.
    fn local_log_joint(&self, n: LatentVarId, z: Assignment<'_>) -> Result<f64>;

    /// Initial variational factors, one per latent; deterministic so that
    /// every method starts from the same point.
    fn init_variational(&self) -> Vec<FamilyParams>;

    /// Model-specific held-out performance metric.
    fn metric(&self, q: &[FamilyParams]) -> f64;

    fn metric_name(&self) -> &'static str;
}

/// Helper: wrap an out-of-support or missing-value failure with the
/// latent it belongs to.
pub(crate) fn prior_term(
    n: LatentVarId,
    params: &FamilyParams,
    value: f64,
) -> Result<f64> {
    params.log_density(value).map_err(|e| e.at_latent(n.0))
}
