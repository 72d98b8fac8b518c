//! Univariate exponential-family distributions used as variational factors.
//!
//! Three families are supported — Gaussian (mean/variance), gamma
//! (shape/mean, with an expectation/variance constructor), and Poisson
//! (mean) — together with the operations gradient estimation needs:
//! log-densities, scores in the chosen parameterization, closed-form
//! moments of the sufficient statistics, sampling, the overdispersion
//! map, deterministic-mixture importance weights, and the derivative of
//! the overdispersed log-density with respect to the dispersion
//! coefficient.
//!
//! Densities and weights are computed in log space throughout;
//! exponentiation happens once, at the final weight, and raises an
//! explicit error instead of saturating.

pub mod transform;

use rand_distr::Distribution;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Which exponential family a parameter vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FamilyKind {
    GaussianMeanVar,
    GammaShapeMean,
    GammaExpVar,
    Poisson,
}

impl FamilyKind {
    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::GaussianMeanVar => "Gaussian(mean, var)",
            FamilyKind::GammaShapeMean => "Gamma(shape, mean)",
            FamilyKind::GammaExpVar => "Gamma(mean, var)",
            FamilyKind::Poisson => "Poisson(mean)",
        }
    }

    /// Number of free parameters.
    pub fn dim(self) -> usize {
        match self {
            FamilyKind::Poisson => 1,
            _ => 2,
        }
    }

    /// Which parameter entries are constrained to be positive.
    pub fn positive_mask(self) -> &'static [bool] {
        match self {
            FamilyKind::GaussianMeanVar => &[false, true],
            FamilyKind::GammaShapeMean | FamilyKind::GammaExpVar => &[true, true],
            FamilyKind::Poisson => &[true],
        }
    }
}

/// A dispersion coefficient, constrained to `tau >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionCoeff(f64);

impl DispersionCoeff {
    pub fn new(tau: f64) -> Result<Self> {
        if !tau.is_finite() || tau < 1.0 {
            return Err(Error::InvalidDispersion(tau));
        }
        Ok(DispersionCoeff(tau))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Validated parameters of one exponential-family factor.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum FamilyParams {
    GaussianMeanVar { mean: f64, var: f64 },
    GammaShapeMean { shape: f64, mean: f64 },
    GammaExpVar { mean: f64, var: f64 },
    Poisson { mean: f64 },
}

fn require(cond: bool, family: &'static str, reason: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParams {
            family,
            reason: reason.to_string(),
        })
    }
}

impl FamilyParams {
    pub fn gaussian(mean: f64, var: f64) -> Result<Self> {
        require(mean.is_finite(), "Gaussian", "mean must be finite")?;
        require(var.is_finite() && var > 0.0, "Gaussian", "variance must be positive")?;
        Ok(FamilyParams::GaussianMeanVar { mean, var })
    }

    pub fn gamma_shape_mean(shape: f64, mean: f64) -> Result<Self> {
        require(shape.is_finite() && shape > 0.0, "Gamma", "shape must be positive")?;
        require(mean.is_finite() && mean > 0.0, "Gamma", "mean must be positive")?;
        Ok(FamilyParams::GammaShapeMean { shape, mean })
    }

    /// Expectation/variance gamma: shape = mean^2 / var, rate = mean / var.
    pub fn gamma_exp_var(mean: f64, var: f64) -> Result<Self> {
        require(mean.is_finite() && mean > 0.0, "GammaE", "mean must be positive")?;
        require(var.is_finite() && var > 0.0, "GammaE", "variance must be positive")?;
        require(mean * mean / var > 0.0, "GammaE", "implied shape underflowed to zero")?;
        Ok(FamilyParams::GammaExpVar { mean, var })
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        require(mean.is_finite() && mean > 0.0, "Poisson", "mean must be positive")?;
        Ok(FamilyParams::Poisson { mean })
    }

    pub fn kind(&self) -> FamilyKind {
        match self {
            FamilyParams::GaussianMeanVar { .. } => FamilyKind::GaussianMeanVar,
            FamilyParams::GammaShapeMean { .. } => FamilyKind::GammaShapeMean,
            FamilyParams::GammaExpVar { .. } => FamilyKind::GammaExpVar,
            FamilyParams::Poisson { .. } => FamilyKind::Poisson,
        }
    }

    pub fn dim(&self) -> usize {
        self.kind().dim()
    }

    /// Parameter entries in the order of the active parameterization.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            FamilyParams::GaussianMeanVar { mean, var } => vec![mean, var],
            FamilyParams::GammaShapeMean { shape, mean } => vec![shape, mean],
            FamilyParams::GammaExpVar { mean, var } => vec![mean, var],
            FamilyParams::Poisson { mean } => vec![mean],
        }
    }

    /// Rebuild validated params of `kind` from a raw value vector.
    pub fn from_values(kind: FamilyKind, values: &[f64]) -> Result<Self> {
        if values.len() != kind.dim() {
            return Err(Error::InvalidParams {
                family: kind.name(),
                reason: format!("expected {} values, got {}", kind.dim(), values.len()),
            });
        }
        match kind {
            FamilyKind::GaussianMeanVar => Self::gaussian(values[0], values[1]),
            FamilyKind::GammaShapeMean => Self::gamma_shape_mean(values[0], values[1]),
            FamilyKind::GammaExpVar => Self::gamma_exp_var(values[0], values[1]),
            FamilyKind::Poisson => Self::poisson(values[0]),
        }
    }

    /// Gamma params as (shape, rate); `None` for other families.
    fn gamma_shape_rate(&self) -> Option<(f64, f64)> {
        match *self {
            FamilyParams::GammaShapeMean { shape, mean } => Some((shape, shape / mean)),
            FamilyParams::GammaExpVar { mean, var } => Some((mean * mean / var, mean / var)),
            _ => None,
        }
    }

    /// Mean of the distribution.
    pub fn mean(&self) -> f64 {
        match *self {
            FamilyParams::GaussianMeanVar { mean, .. } => mean,
            FamilyParams::GammaShapeMean { mean, .. } => mean,
            FamilyParams::GammaExpVar { mean, .. } => mean,
            FamilyParams::Poisson { mean } => mean,
        }
    }

    /// Variance of the distribution.
    pub fn variance(&self) -> f64 {
        match *self {
            FamilyParams::GaussianMeanVar { var, .. } => var,
            FamilyParams::GammaShapeMean { shape, mean } => mean * mean / shape,
            FamilyParams::GammaExpVar { var, .. } => var,
            FamilyParams::Poisson { mean } => mean,
        }
    }

    fn check_support(&self, z: f64) -> Result<()> {
        let ok = match self {
            FamilyParams::GaussianMeanVar { .. } => z.is_finite(),
            FamilyParams::GammaShapeMean { .. } | FamilyParams::GammaExpVar { .. } => {
                z.is_finite() && z > 0.0
            }
            FamilyParams::Poisson { .. } => z.is_finite() && z >= 0.0 && z.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::OutOfSupport {
                family: self.kind().name(),
                value: z,
            })
        }
    }

    /// log q(z; lambda), base measure and log-normalizer included.
    pub fn log_density(&self, z: f64) -> Result<f64> {
        self.check_support(z)?;
        Ok(match *self {
            FamilyParams::GaussianMeanVar { mean, var } => {
                let d = z - mean;
                -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
            }
            FamilyParams::GammaShapeMean { .. } | FamilyParams::GammaExpVar { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * z.ln() - rate * z
            }
            FamilyParams::Poisson { mean } => z * mean.ln() - mean - ln_gamma(z + 1.0),
        })
    }

    /// Gradient of `log_density` with respect to the active
    /// parameterization. Has zero expectation under the distribution.
    pub fn score(&self, z: f64) -> Result<Vec<f64>> {
        self.check_support(z)?;
        Ok(match *self {
            FamilyParams::GaussianMeanVar { mean, var } => {
                let d = z - mean;
                vec![d / var, -0.5 / var + d * d / (2.0 * var * var)]
            }
            FamilyParams::GammaShapeMean { shape, mean } => {
                let d_shape = (shape / mean).ln() + 1.0 - digamma(shape) + z.ln() - z / mean;
                let d_mean = shape * (z - mean) / (mean * mean);
                vec![d_shape, d_mean]
            }
            FamilyParams::GammaExpVar { mean, var } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                // Partials in (shape, rate), then chain through
                // shape = m^2/v, rate = m/v.
                let d_shape = rate.ln() - digamma(shape) + z.ln();
                let d_rate = shape / rate - z;
                let d_mean = d_shape * (2.0 * mean / var) + d_rate / var;
                let d_var =
                    d_shape * (-mean * mean / (var * var)) + d_rate * (-mean / (var * var));
                vec![d_mean, d_var]
            }
            FamilyParams::Poisson { mean } => vec![z / mean - 1.0],
        })
    }

    /// Closed-form expectations of the sufficient statistics:
    /// Gaussian `[E z, E z^2]`, gamma `[E z, E log z]`, Poisson `[E z]`.
    pub fn mean_sufficient_stats(&self) -> Vec<f64> {
        match *self {
            FamilyParams::GaussianMeanVar { mean, var } => vec![mean, mean * mean + var],
            FamilyParams::GammaShapeMean { .. } | FamilyParams::GammaExpVar { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                vec![shape / rate, digamma(shape) - rate.ln()]
            }
            FamilyParams::Poisson { mean } => vec![mean],
        }
    }

    /// Sufficient statistics evaluated at `z`, in the same order as
    /// [`mean_sufficient_stats`](Self::mean_sufficient_stats).
    pub fn sufficient_stats(&self, z: f64) -> Result<Vec<f64>> {
        self.check_support(z)?;
        Ok(match self.kind() {
            FamilyKind::GaussianMeanVar => vec![z, z * z],
            FamilyKind::GammaShapeMean | FamilyKind::GammaExpVar => vec![z, z.ln()],
            FamilyKind::Poisson => vec![z],
        })
    }

    /// One draw from the distribution.
    pub fn sample(&self, rng: &mut RandomStream) -> f64 {
        match *self {
            FamilyParams::GaussianMeanVar { mean, var } => {
                rand_distr::Normal::new(mean, var.sqrt())
                    .expect("validated params")
                    .sample(rng)
            }
            FamilyParams::GammaShapeMean { .. } | FamilyParams::GammaExpVar { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                let draw = rand_distr::Gamma::new(shape, 1.0 / rate)
                    .expect("validated params")
                    .sample(rng);
                // Small shapes can underflow to 0.0, which is outside the
                // support; clamp to the smallest positive normal.
                draw.max(f64::MIN_POSITIVE)
            }
            FamilyParams::Poisson { mean } => rand_distr::Poisson::new(mean)
                .expect("validated params")
                .sample(rng),
        }
    }

    /// Overdispersed member of the same family with coefficient `tau`.
    ///
    /// Gaussian(mean, var) maps to Gaussian(mean, tau * var); gamma with
    /// shape s and rate r maps to shape (s + tau - 1)/tau and rate r/tau
    /// (converted through the active parameterization); Poisson(lambda)
    /// maps to Poisson(lambda^(1/tau)). `tau = 1` returns the parameters
    /// unchanged, bit for bit.
    pub fn overdisperse(&self, tau: DispersionCoeff) -> FamilyParams {
        let t = tau.get();
        if t == 1.0 {
            return *self;
        }
        match *self {
            FamilyParams::GaussianMeanVar { mean, var } => FamilyParams::GaussianMeanVar {
                mean,
                var: t * var,
            },
            FamilyParams::GammaShapeMean { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                let od_shape = (shape + t - 1.0) / t;
                let od_rate = rate / t;
                FamilyParams::GammaShapeMean {
                    shape: od_shape,
                    mean: od_shape / od_rate,
                }
            }
            FamilyParams::GammaExpVar { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                let od_shape = (shape + t - 1.0) / t;
                let od_rate = rate / t;
                FamilyParams::GammaExpVar {
                    mean: od_shape / od_rate,
                    var: od_shape / (od_rate * od_rate),
                }
            }
            FamilyParams::Poisson { mean } => FamilyParams::Poisson {
                mean: mean.powf(1.0 / t),
            },
        }
    }

    /// d/d tau of the overdispersed log-density log r(z; lambda, tau),
    /// via the chain rule through the closed-form parameter maps.
    pub fn dlog_proposal_dtau(&self, tau: DispersionCoeff, z: f64) -> Result<f64> {
        self.check_support(z)?;
        let t = tau.get();
        Ok(match *self {
            FamilyParams::GaussianMeanVar { mean, var } => {
                let d = z - mean;
                -0.5 / t + d * d / (2.0 * t * t * var)
            }
            FamilyParams::GammaShapeMean { .. } | FamilyParams::GammaExpVar { .. } => {
                let (shape, rate) = self.gamma_shape_rate().unwrap();
                let od_shape = (shape + t - 1.0) / t;
                let od_rate = rate / t;
                let dshape_dt = (1.0 - shape) / (t * t);
                let drate_dt = -rate / (t * t);
                let dlog_dshape = od_rate.ln() - digamma(od_shape) + z.ln();
                let dlog_drate = od_shape / od_rate - z;
                dlog_dshape * dshape_dt + dlog_drate * drate_dt
            }
            FamilyParams::Poisson { mean } => {
                let od_mean = mean.powf(1.0 / t);
                (od_mean - z) * mean.ln() / (t * t)
            }
        })
    }
}

/// Importance weight of `z` drawn under the deterministic mixture of
/// overdispersed proposals: w(z) = q(z) / ((1/J) sum_j r_j(z)).
///
/// Computed in log space; all equal proposals (including J = 1) use the
/// single-component log-density directly so that tau = 1 yields exactly 1.
pub fn importance_weight(q: &FamilyParams, proposals: &[FamilyParams], z: f64) -> Result<f64> {
    assert!(!proposals.is_empty(), "at least one proposal required");
    let log_q = q.log_density(z)?;
    let all_equal = proposals.windows(2).all(|w| w[0] == w[1]);
    let log_mix = if all_equal {
        proposals[0].log_density(z)?
    } else {
        let logs = proposals
            .iter()
            .map(|r| r.log_density(z))
            .collect::<Result<Vec<_>>>()?;
        log_sum_exp(&logs) - (proposals.len() as f64).ln()
    };
    let w = (log_q - log_mix).exp();
    if !w.is_finite() || log_mix == f64::NEG_INFINITY {
        return Err(Error::WeightOverflow {
            z,
            log_q,
            log_mix,
        });
    }
    Ok(w)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
