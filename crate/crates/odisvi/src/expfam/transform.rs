//! Unconstrained reparameterization of positive parameters.
//!
//! Positive-constrained entries are mapped through the inverse softplus,
//! `lambda' = log(exp(lambda) - 1)`, so the optimizer can take
//! unconstrained steps; the inverse is `lambda = log(exp(lambda') + 1)`.
//! Unconstrained entries (the Gaussian mean) pass through unchanged.

use crate::error::{Error, Result};
use crate::expfam::{FamilyKind, FamilyParams};

/// Image of a parameter vector under the unconstrained map.
#[derive(Debug, Clone, PartialEq)]
pub struct UnconstrainedParams {
    pub kind: FamilyKind,
    pub values: Vec<f64>,
}

/// log(exp(x) - 1), stable for both tails.
fn inv_softplus(x: f64) -> f64 {
    if x > 30.0 {
        // exp(-x) vanishes against 1; log(exp(x)-1) = x + log(1 - exp(-x)).
        x + (-(-x).exp()).ln_1p()
    } else {
        x.exp_m1().ln()
    }
}

/// log(exp(y) + 1), stable for both tails.
fn softplus(y: f64) -> f64 {
    if y > 30.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

/// d softplus / dy = 1 / (1 + exp(-y)).
fn softplus_grad(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

impl FamilyParams {
    /// Map to unconstrained coordinates. Errors if a positive-constrained
    /// entry is not strictly positive (unrepresentable by construction,
    /// but guarded for raw-value call paths).
    pub fn to_unconstrained(&self) -> Result<UnconstrainedParams> {
        let kind = self.kind();
        let values = self
            .values()
            .iter()
            .zip(kind.positive_mask())
            .map(|(&v, &pos)| {
                if !pos {
                    Ok(v)
                } else if v > 0.0 {
                    Ok(inv_softplus(v))
                } else {
                    Err(Error::InvalidParams {
                        family: kind.name(),
                        reason: format!("non-positive constrained entry {v}"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(UnconstrainedParams { kind, values })
    }
}

impl UnconstrainedParams {
    /// Map back to validated family parameters.
    pub fn to_family(&self) -> Result<FamilyParams> {
        let values: Vec<f64> = self
            .values
            .iter()
            .zip(self.kind.positive_mask())
            .map(|(&v, &pos)| if pos { softplus(v) } else { v })
            .collect();
        FamilyParams::from_values(self.kind, &values)
    }

    /// Chain factors d lambda / d lambda' per component, for mapping
    /// constrained-space gradients into unconstrained coordinates.
    pub fn grad_chain(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(self.kind.positive_mask())
            .map(|(&v, &pos)| if pos { softplus_grad(v) } else { 1.0 })
            .collect()
    }
}
