//! Score-function gradient estimators for the ELBO.
//!
//! Two estimators share one code path: the plain Rao-Blackwellized
//! score-function estimator, which samples each latent from its own
//! variational factor, and the overdispersed importance-sampled variant,
//! which draws from heavier-tailed proposals in the same family and
//! reweights. Unit dispersion makes the second collapse to the first,
//! bit for bit, so `bbvi_gradient` simply runs the shared path with all
//! coefficients fixed at one.
//!
//! Per iteration a single full-model draw `z0` supplies the values of
//! every latent outside the focal variable; per latent, `S` proposal
//! draws estimate the gradient and `S` further draws estimate the
//! control-variate coefficients on a disjoint set.

use rayon::prelude::*;

use crate::dispersion::DispersionState;
use crate::error::{Error, Result};
use crate::expfam::{importance_weight, FamilyParams};
use crate::model::{Assignment, LatentVarId, Model};
use crate::rng::{RandomStream, StreamForker};

/// Variance floor below which a control-variate coefficient is zeroed.
const CV_VAR_FLOOR: f64 = 1e-12;

/// Gradient estimate with per-component diagnostics.
#[derive(Debug, Clone)]
pub struct GradEstimate {
    /// Estimated gradient, indexed `[latent][component]`.
    pub values: Vec<Vec<f64>>,
    /// Sample variance of the estimator (variance of the sample mean),
    /// indexed `[latent][component]`.
    pub variances: Vec<Vec<f64>>,
    /// Effective sample size of the importance weights per latent.
    pub ess: Vec<f64>,
}

/// Per-latent draws retained for dispersion adaptation.
#[derive(Debug, Clone)]
pub struct LatentSamples {
    /// Proposal draws z_n^(s) of the gradient set.
    pub draws: Vec<f64>,
    /// Mixture component each draw was deterministically assigned to.
    pub component: Vec<usize>,
    /// Importance weights w(z_n^(s)).
    pub weights: Vec<f64>,
    /// Unweighted f_n(z^(s)) per parameter component, indexed `[s][c]`.
    pub f: Vec<Vec<f64>>,
}

/// Everything drawn during one gradient estimation.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// The shared full-model draw z^(0).
    pub z0: Vec<f64>,
    pub per_latent: Vec<LatentSamples>,
}

/// f_n(z) = h_n(z_n) * (log p_n(x, z_n, z0 rest) - log q(z_n)), the
/// Rao-Blackwellized integrand, one entry per parameter component.
pub fn f_term<M: Model + ?Sized>(
    model: &M,
    q_n: &FamilyParams,
    n: LatentVarId,
    z_n: f64,
    z0: &[f64],
) -> Result<Vec<f64>> {
    let local = model.local_log_joint(n, Assignment::with_patch(z0, n, z_n))?;
    let log_q = q_n.log_density(z_n)?;
    let h = q_n.score(z_n)?;
    Ok(h.into_iter().map(|hc| hc * (local - log_q)).collect())
}

/// Optimal control-variate coefficient Cov(fw, hw) / Var(hw); zero when
/// the score variance degenerates.
pub fn control_variate_coeff(fw: &[f64], hw: &[f64]) -> f64 {
    debug_assert!(fw.len() == hw.len() && fw.len() >= 2);
    let m = fw.len() as f64;
    let mean_f = fw.iter().sum::<f64>() / m;
    let mean_h = hw.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (f, h) in fw.iter().zip(hw) {
        cov += (f - mean_f) * (h - mean_h);
        var += (h - mean_h) * (h - mean_h);
    }
    cov /= m - 1.0;
    var /= m - 1.0;
    if var < CV_VAR_FLOOR {
        0.0
    } else {
        cov / var
    }
}

/// Mean over all parameter components of the per-component sample
/// variance of the estimator.
pub fn sample_variance_summary(g: &GradEstimate) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for per_latent in &g.variances {
        for &v in per_latent {
            total += v;
            count += 1;
        }
    }
    total / count as f64
}

/// Plain Rao-Blackwellized score-function estimator: the unit-dispersion,
/// single-proposal path of [`obbvi_gradient`], so the two are
/// bit-identical under shared random streams.
pub fn bbvi_gradient<M: Model + ?Sized>(
    model: &M,
    q: &[FamilyParams],
    s: usize,
    rng: &mut RandomStream,
) -> Result<GradEstimate> {
    let disp = DispersionState::fixed_unit(q.len());
    obbvi_gradient(model, q, &disp, s, 1, rng)
}

/// Overdispersed importance-sampled estimator with deterministic-mixture
/// proposals and control variates.
pub fn obbvi_gradient<M: Model + ?Sized>(
    model: &M,
    q: &[FamilyParams],
    disp: &DispersionState,
    s: usize,
    j: usize,
    rng: &mut RandomStream,
) -> Result<GradEstimate> {
    obbvi_gradient_with_batch(model, q, disp, s, j, rng, true).map(|(g, _)| g)
}

/// As [`obbvi_gradient`], returning the sample batch for reuse by the
/// dispersion adaptation. `parallel` fans the per-latent work out over
/// the current rayon pool; serial and parallel runs produce identical
/// output for the same stream.
pub fn obbvi_gradient_with_batch<M: Model + ?Sized>(
    model: &M,
    q: &[FamilyParams],
    disp: &DispersionState,
    s: usize,
    j: usize,
    rng: &mut RandomStream,
    parallel: bool,
) -> Result<(GradEstimate, SampleBatch)> {
    if s < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {s}")));
    }
    if !s.is_multiple_of(j) {
        return Err(Error::Config(format!(
            "sample count {s} is not a multiple of the {j} mixture components"
        )));
    }
    if disp.num_latents() != q.len() || disp.num_components() != j {
        return Err(Error::Config(
            "dispersion state does not match the variational factors".into(),
        ));
    }

    let z0: Vec<f64> = q.iter().map(|p| p.sample(rng)).collect();
    let forker = rng.fork();

    let run_one = |n: usize| estimate_latent(model, q, disp, s, j, n, &z0, &forker);
    let results: Vec<Result<PerLatent>> = if parallel {
        (0..q.len()).into_par_iter().map(run_one).collect()
    } else {
        (0..q.len()).map(run_one).collect()
    };

    let mut values = Vec::with_capacity(q.len());
    let mut variances = Vec::with_capacity(q.len());
    let mut ess = Vec::with_capacity(q.len());
    let mut per_latent = Vec::with_capacity(q.len());
    for r in results {
        let one = r?;
        values.push(one.value);
        variances.push(one.variance);
        ess.push(one.ess);
        per_latent.push(one.samples);
    }
    Ok((
        GradEstimate {
            values,
            variances,
            ess,
        },
        SampleBatch { z0, per_latent },
    ))
}

struct PerLatent {
    value: Vec<f64>,
    variance: Vec<f64>,
    ess: f64,
    samples: LatentSamples,
}

struct WeightedSet {
    draws: Vec<f64>,
    component: Vec<usize>,
    weights: Vec<f64>,
    /// Unweighted f per `[s][c]`.
    f: Vec<Vec<f64>>,
    /// Unweighted score per `[s][c]`.
    h: Vec<Vec<f64>>,
}

fn draw_weighted_set<M: Model + ?Sized>(
    model: &M,
    q_n: &FamilyParams,
    proposals: &[FamilyParams],
    n: LatentVarId,
    z0: &[f64],
    s: usize,
    rng: &mut RandomStream,
) -> Result<WeightedSet> {
    let j = proposals.len();
    let per_component = s / j;
    let mut set = WeightedSet {
        draws: Vec::with_capacity(s),
        component: Vec::with_capacity(s),
        weights: Vec::with_capacity(s),
        f: Vec::with_capacity(s),
        h: Vec::with_capacity(s),
    };
    for (ji, proposal) in proposals.iter().enumerate() {
        for _ in 0..per_component {
            let z = proposal.sample(rng);
            let w = importance_weight(q_n, proposals, z)?;
            let f = f_term(model, q_n, n, z, z0)?;
            let h = q_n.score(z)?;
            set.draws.push(z);
            set.component.push(ji);
            set.weights.push(w);
            set.f.push(f);
            set.h.push(h);
        }
    }
    Ok(set)
}

#[allow(clippy::too_many_arguments)]
fn estimate_latent<M: Model + ?Sized>(
    model: &M,
    q: &[FamilyParams],
    disp: &DispersionState,
    s: usize,
    j: usize,
    n: usize,
    z0: &[f64],
    forker: &StreamForker,
) -> Result<PerLatent> {
    let q_n = &q[n];
    let taus = disp.taus(n);
    let mut rng = forker.stream(n as u64);
    let proposals: Vec<FamilyParams> = taus.iter().map(|&t| q_n.overdisperse(t)).collect();
    debug_assert_eq!(proposals.len(), j);

    let wrap = |e: Error| Error::Estimator {
        latent: n,
        taus: taus.iter().map(|t| t.get()).collect(),
        source: Box::new(e),
    };

    let id = LatentVarId(n);
    let grad_set = draw_weighted_set(model, q_n, &proposals, id, z0, s, &mut rng).map_err(wrap)?;
    let cv_set = draw_weighted_set(model, q_n, &proposals, id, z0, s, &mut rng).map_err(wrap)?;

    let dim = q_n.dim();
    let mut value = Vec::with_capacity(dim);
    let mut variance = Vec::with_capacity(dim);
    for c in 0..dim {
        let fw_cv: Vec<f64> = (0..s).map(|i| cv_set.weights[i] * cv_set.f[i][c]).collect();
        let hw_cv: Vec<f64> = (0..s).map(|i| cv_set.weights[i] * cv_set.h[i][c]).collect();
        let a = control_variate_coeff(&fw_cv, &hw_cv);

        let terms: Vec<f64> = (0..s)
            .map(|i| grad_set.weights[i] * (grad_set.f[i][c] - a * grad_set.h[i][c]))
            .collect();
        let mean = terms.iter().sum::<f64>() / s as f64;
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (s as f64 - 1.0);
        value.push(mean);
        variance.push(var / s as f64);
    }

    let w_sum: f64 = grad_set.weights.iter().sum();
    let w2_sum: f64 = grad_set.weights.iter().map(|w| w * w).sum();
    let ess = w_sum * w_sum / w2_sum;
    if ess < 2.0 {
        log::debug!(
            "latent {n}: importance weights degenerate (ESS {ess:.2} of {s}, tau {:?})",
            taus.iter().map(|t| t.get()).collect::<Vec<_>>()
        );
    }

    Ok(PerLatent {
        value,
        variance,
        ess,
        samples: LatentSamples {
            draws: grad_set.draws,
            component: grad_set.component,
            weights: grad_set.weights,
            f: grad_set.f,
        },
    })
}
