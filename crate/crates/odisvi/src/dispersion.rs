//! Online adaptation of per-variable dispersion coefficients.
//!
//! The coefficients are tuned by stochastic descent on the estimator
//! variance, reusing the samples already drawn for the gradient: the
//! derivative of the variance with respect to each coefficient is
//! estimated with the log-derivative trick, and the update takes a fixed
//! step in the direction of its sign (the raw derivative can be orders
//! of magnitude larger than the coefficient itself).

use crate::error::Result;
use crate::estimator::SampleBatch;
use crate::expfam::{log_sum_exp, DispersionCoeff, FamilyParams};

/// Per-variable dispersion coefficients and their adaptation step.
#[derive(Debug, Clone)]
pub struct DispersionState {
    /// Coefficients, indexed `[latent][component]`.
    taus: Vec<Vec<f64>>,
    /// Which mixture columns adapt; frozen columns never move.
    adapt: Vec<bool>,
    /// Step magnitude for the sign update.
    pub alpha: f64,
}

impl DispersionState {
    /// Single adaptive proposal per variable.
    pub fn single(num_latents: usize, tau_init: f64, alpha: f64) -> Self {
        assert!(tau_init >= 1.0);
        DispersionState {
            taus: vec![vec![tau_init]; num_latents],
            adapt: vec![true],
            alpha,
        }
    }

    /// Two-component mixture with the first coefficient frozen at 1 and
    /// only the second adapting.
    pub fn mixture(num_latents: usize, tau2_init: f64, alpha: f64) -> Self {
        assert!(tau2_init >= 1.0);
        DispersionState {
            taus: vec![vec![1.0, tau2_init]; num_latents],
            adapt: vec![false, true],
            alpha,
        }
    }

    /// Unit dispersion, never adapted: the plain score-function path.
    pub fn fixed_unit(num_latents: usize) -> Self {
        DispersionState {
            taus: vec![vec![1.0]; num_latents],
            adapt: vec![false],
            alpha: 0.0,
        }
    }

    /// Arbitrary coefficient layout with explicit adaptation flags.
    pub fn custom(taus: Vec<Vec<f64>>, adapt: Vec<bool>, alpha: f64) -> crate::error::Result<Self> {
        if taus.is_empty() || adapt.is_empty() {
            return Err(crate::error::Error::Config("empty dispersion state".into()));
        }
        for row in &taus {
            if row.len() != adapt.len() {
                return Err(crate::error::Error::Config(
                    "dispersion rows disagree with the component count".into(),
                ));
            }
            for &t in row {
                crate::expfam::DispersionCoeff::new(t)?;
            }
        }
        Ok(DispersionState { taus, adapt, alpha })
    }

    pub fn num_latents(&self) -> usize {
        self.taus.len()
    }

    pub fn num_components(&self) -> usize {
        self.adapt.len()
    }

    pub fn adapts(&self) -> bool {
        self.adapt.iter().any(|&a| a)
    }

    pub fn taus(&self, n: usize) -> Vec<DispersionCoeff> {
        self.taus[n]
            .iter()
            .map(|&t| DispersionCoeff::new(t).expect("state keeps tau >= 1"))
            .collect()
    }

    pub fn raw_taus(&self, n: usize) -> &[f64] {
        &self.taus[n]
    }

    /// Mean over every coefficient in the state.
    pub fn mean_tau(&self) -> f64 {
        let total: f64 = self.taus.iter().map(|row| row.iter().sum::<f64>()).sum();
        let count = self.taus.len() * self.num_components();
        total / count as f64
    }
}

/// Monte Carlo estimate of d Var / d tau_nj for every mixture component
/// of latent `n`, reusing the f-values and weights of `batch`.
///
/// For a mixture the chain rule gives
/// d log r_mix / d tau_j = softmax_j(log r_j) * d log r_j / d tau_j,
/// which for a single proposal reduces to the plain derivative.
pub fn variance_grad_tau(
    q_n: &FamilyParams,
    n: usize,
    batch: &SampleBatch,
    disp: &DispersionState,
) -> Result<Vec<f64>> {
    let taus = disp.taus(n);
    let j = taus.len();
    let samples = &batch.per_latent[n];
    let s = samples.draws.len();
    let mut neg_dvar = vec![0.0; j];
    for i in 0..s {
        let z = samples.draws[i];
        let w = samples.weights[i];
        let f_sq: f64 = samples.f[i].iter().map(|f| f * f).sum();
        let scale = f_sq * w * w / s as f64;
        if j == 1 {
            neg_dvar[0] += scale * q_n.dlog_proposal_dtau(taus[0], z)?;
        } else {
            let logs: Vec<f64> = taus
                .iter()
                .map(|&t| q_n.overdisperse(t).log_density(z))
                .collect::<Result<_>>()?;
            let lse = log_sum_exp(&logs);
            for (ji, &tau) in taus.iter().enumerate() {
                let responsibility = (logs[ji] - lse).exp();
                neg_dvar[ji] += scale * responsibility * q_n.dlog_proposal_dtau(tau, z)?;
            }
        }
    }
    Ok(neg_dvar.into_iter().map(|g| -g).collect())
}

/// Apply one sign step per adaptable coefficient:
/// tau <- max(1, tau - alpha * sign(dVar/dtau)); zero derivatives leave
/// the coefficient untouched.
pub fn update_tau(disp: &DispersionState, grads: &[Vec<f64>]) -> DispersionState {
    assert_eq!(grads.len(), disp.taus.len());
    let mut next = disp.clone();
    for (row, g_row) in next.taus.iter_mut().zip(grads) {
        for (ji, tau) in row.iter_mut().enumerate() {
            if !next.adapt[ji] {
                continue;
            }
            let g = g_row[ji];
            if g == 0.0 {
                continue;
            }
            let step = if g > 0.0 { disp.alpha } else { -disp.alpha };
            *tau = (*tau - step).max(1.0);
        }
    }
    next
}
