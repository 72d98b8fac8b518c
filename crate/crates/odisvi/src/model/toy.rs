//! Conjugate Gaussian toy model: z ~ N(mu0, var0), x_i ~ N(z, var_lik).
//!
//! Everything about this model is available in closed form — posterior,
//! evidence, and ELBO gradient — which makes it the workhorse oracle for
//! estimator and optimizer tests.

use crate::error::Result;
use crate::expfam::FamilyParams;
use crate::model::{Assignment, LatentVarId, Model};

#[derive(Debug, Clone)]
pub struct ToyModel {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub lik_var: f64,
    pub data: Vec<f64>,
}

impl ToyModel {
    pub fn new(prior_mean: f64, prior_var: f64, lik_var: f64, data: Vec<f64>) -> Self {
        assert!(prior_var > 0.0 && lik_var > 0.0);
        ToyModel {
            prior_mean,
            prior_var,
            lik_var,
            data,
        }
    }

    /// Default instance used by the harness.
    pub fn default_instance() -> Self {
        ToyModel::new(0.0, 1.0, 1.0, vec![1.2, 0.4, 2.1, -0.3, 1.0])
    }

    pub fn posterior(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let precision = 1.0 / self.prior_var + n / self.lik_var;
        let var = 1.0 / precision;
        let mean = var
            * (self.prior_mean / self.prior_var
                + self.data.iter().sum::<f64>() / self.lik_var);
        (mean, var)
    }

    /// Exact log evidence via log p(x) = log p(x, z) - log p(z | x).
    pub fn log_evidence(&self) -> f64 {
        let (pm, pv) = self.posterior();
        let joint = self.log_joint(&[pm]).expect("posterior mean in support");
        let posterior = FamilyParams::gaussian(pm, pv).unwrap();
        joint - posterior.log_density(pm).unwrap()
    }

    /// Closed-form ELBO for q = N(m, v).
    pub fn elbo(&self, m: f64, v: f64) -> f64 {
        use crate::expfam::LN_2PI;
        let prior = -0.5 * (LN_2PI + self.prior_var.ln())
            - ((m - self.prior_mean).powi(2) + v) / (2.0 * self.prior_var);
        let lik: f64 = self
            .data
            .iter()
            .map(|&x| -0.5 * (LN_2PI + self.lik_var.ln()) - ((x - m).powi(2) + v) / (2.0 * self.lik_var))
            .sum();
        let entropy = 0.5 * (LN_2PI + 1.0 + v.ln());
        prior + lik + entropy
    }

    /// Closed-form ELBO gradient for q = N(m, v), components (d/dm, d/dv).
    pub fn elbo_grad(&self, m: f64, v: f64) -> [f64; 2] {
        let n = self.data.len() as f64;
        let d_m = -(m - self.prior_mean) / self.prior_var
            + self.data.iter().map(|&x| (x - m) / self.lik_var).sum::<f64>();
        let d_v = -0.5 / self.prior_var - 0.5 * n / self.lik_var + 0.5 / v;
        [d_m, d_v]
    }
}

impl Model for ToyModel {
    fn num_latents(&self) -> usize {
        1
    }

    fn blanket(&self, _n: LatentVarId) -> Vec<LatentVarId> {
        Vec::new()
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        self.local_log_joint(LatentVarId(0), Assignment::new(z))
    }

    fn local_log_joint(&self, n: LatentVarId, z: Assignment<'_>) -> Result<f64> {
        debug_assert_eq!(n.0, 0);
        let zv = z.value(n)?;
        let prior = FamilyParams::gaussian(self.prior_mean, self.prior_var).unwrap();
        let mut total = crate::model::prior_term(n, &prior, zv)?;
        for &x in &self.data {
            let lik = FamilyParams::gaussian(zv, self.lik_var)
                .map_err(|e| e.at_latent(n.0))?;
            total += lik.log_density(x)?;
        }
        Ok(total)
    }

    fn init_variational(&self) -> Vec<FamilyParams> {
        vec![FamilyParams::gaussian(0.0, 1.0).unwrap()]
    }

    /// Absolute error of the variational mean against the exact
    /// posterior mean.
    fn metric(&self, q: &[FamilyParams]) -> f64 {
        let (pm, _) = self.posterior();
        (q[0].mean() - pm).abs()
    }

    fn metric_name(&self) -> &'static str {
        "posterior_mean_abs_error"
    }
}
