//! Stochastic ELBO ascent with AdaGrad steps in unconstrained space.
//!
//! One iteration draws a shared full-model sample, estimates the
//! gradient with the configured method, adapts the dispersion
//! coefficients when importance sampling is active, maps the gradient
//! through the softplus chain factors, and takes an AdaGrad step on the
//! unconstrained parameters. Positive-constrained parameters therefore
//! stay in-domain for the whole run.

use std::time::Instant;

use crate::dispersion::{update_tau, variance_grad_tau, DispersionState};
use crate::error::{Error, Result};
use crate::estimator::{obbvi_gradient_with_batch, sample_variance_summary};
use crate::expfam::transform::UnconstrainedParams;
use crate::expfam::FamilyParams;
use crate::model::Model;
use crate::rng::RandomStream;
use crate::trace::{RunTrace, TraceRow};

const ADAGRAD_EPS: f64 = 1e-10;

/// Gradient-estimation method of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bbvi,
    BbviX2,
    ObbviSingle,
    ObbviMixture,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bbvi => "bbvi",
            Method::BbviX2 => "bbvi_x2",
            Method::ObbviSingle => "obbvi_single",
            Method::ObbviMixture => "obbvi_mixture",
        }
    }

    pub fn mixture_components(self) -> usize {
        match self {
            Method::ObbviMixture => 2,
            _ => 1,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bbvi" => Ok(Method::Bbvi),
            "bbvi_x2" => Ok(Method::BbviX2),
            "obbvi_single" => Ok(Method::ObbviSingle),
            "obbvi_mixture" => Ok(Method::ObbviMixture),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Diagonal-AdaGrad state: accumulated squared gradients per component.
#[derive(Debug, Clone)]
pub struct AdaGradState {
    accum: Vec<Vec<f64>>,
    pub eta: f64,
}

impl AdaGradState {
    pub fn new(dims: &[usize], eta: f64) -> Self {
        AdaGradState {
            accum: dims.iter().map(|&d| vec![0.0; d]).collect(),
            eta,
        }
    }

    pub fn accum(&self) -> &[Vec<f64>] {
        &self.accum
    }

    /// Accumulate grad^2 and return the additive step
    /// eta * g / sqrt(accumulator + eps), per component.
    pub fn step(&mut self, grad: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut steps = Vec::with_capacity(grad.len());
        for (n, (acc_row, g_row)) in self.accum.iter_mut().zip(grad).enumerate() {
            let mut row = Vec::with_capacity(g_row.len());
            for (c, (acc, &g)) in acc_row.iter_mut().zip(g_row).enumerate() {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient {
                        component: format!("latent {n} component {c}"),
                    });
                }
                *acc += g * g;
                row.push(self.eta * g / (*acc + ADAGRAD_EPS).sqrt());
            }
            steps.push(row);
        }
        Ok(steps)
    }
}

/// Full configuration of one optimization run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub method: Method,
    /// Gradient samples per latent (an equal-sized disjoint set estimates
    /// the control variates). The doubled method uses twice this many.
    pub samples: usize,
    /// AdaGrad scale constant.
    pub eta: f64,
    /// Dispersion adaptation step length.
    pub alpha: f64,
    pub seed: u64,
    pub budget_seconds: f64,
    /// Record a trace row every this many iterations.
    pub eval_interval: u64,
    /// Optional hard iteration cap.
    pub max_iters: Option<u64>,
    /// Virtual seconds per iteration. When set, elapsed time is this
    /// deterministic clock instead of wall time, making whole traces
    /// reproducible byte for byte.
    pub fake_clock: Option<f64>,
    /// Fan gradient estimation out over the rayon pool.
    pub parallel: bool,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config("need at least 2 samples".into()));
        }
        let j = self.method.mixture_components();
        if !self.effective_samples().is_multiple_of(j) {
            return Err(Error::Config(format!(
                "sample count {} is not a multiple of the {} mixture components",
                self.effective_samples(),
                j
            )));
        }
        if self.eval_interval == 0 {
            return Err(Error::Config("eval interval must be positive".into()));
        }
        if self.budget_seconds.is_nan() || self.budget_seconds < 0.0 {
            return Err(Error::Config("budget must be non-negative".into()));
        }
        if self.eta <= 0.0 || self.alpha <= 0.0 {
            return Err(Error::Config("eta and alpha must be positive".into()));
        }
        Ok(())
    }

    /// Samples actually drawn per set: doubled for the x2 method.
    pub fn effective_samples(&self) -> usize {
        match self.method {
            Method::BbviX2 => 2 * self.samples,
            _ => self.samples,
        }
    }

    pub fn initial_dispersion(&self, num_latents: usize) -> DispersionState {
        match self.method {
            Method::Bbvi | Method::BbviX2 => DispersionState::fixed_unit(num_latents),
            Method::ObbviSingle => DispersionState::single(num_latents, 2.0, self.alpha),
            Method::ObbviMixture => DispersionState::mixture(num_latents, 3.0, self.alpha),
        }
    }
}

enum Clock {
    Real(Instant),
    Fake { per_iter: f64, ticks: u64 },
}

impl Clock {
    fn new(fake: Option<f64>) -> Self {
        match fake {
            Some(per_iter) => Clock::Fake { per_iter, ticks: 0 },
            None => Clock::Real(Instant::now()),
        }
    }

    fn elapsed(&self) -> f64 {
        match self {
            Clock::Real(start) => start.elapsed().as_secs_f64(),
            Clock::Fake { per_iter, ticks } => per_iter * *ticks as f64,
        }
    }

    fn tick(&mut self) {
        if let Clock::Fake { ticks, .. } = self {
            *ticks += 1;
        }
    }
}

/// Single-sample ELBO estimate: log p(x, z) - log q(z) at one z ~ q.
pub fn elbo_estimate<M: Model + ?Sized>(
    model: &M,
    q: &[FamilyParams],
    rng: &mut RandomStream,
) -> Result<f64> {
    let z: Vec<f64> = q.iter().map(|p| p.sample(rng)).collect();
    let log_p = model.log_joint(&z)?;
    let mut log_q = 0.0;
    for (p, &zv) in q.iter().zip(&z) {
        log_q += p.log_density(zv)?;
    }
    Ok(log_p - log_q)
}

fn check_in_domain(q: &[FamilyParams]) -> Result<()> {
    for (n, p) in q.iter().enumerate() {
        // Re-validate through the constructor path.
        FamilyParams::from_values(p.kind(), &p.values()).map_err(|e| e.at_latent(n))?;
    }
    Ok(())
}

/// Run the full optimization loop until the budget (or iteration cap)
/// is exhausted, recording an evaluation row at iteration zero and every
/// `eval_interval` iterations after that.
pub fn run<M: Model + ?Sized>(
    config: &RunConfig,
    model: &M,
    model_name: &str,
    rng: &mut RandomStream,
) -> Result<RunTrace> {
    config.validate()?;
    let num_latents = model.num_latents();
    let mut q = model.init_variational();
    let mut unc: Vec<UnconstrainedParams> = q
        .iter()
        .map(|p| p.to_unconstrained())
        .collect::<Result<_>>()?;
    let dims: Vec<usize> = q.iter().map(|p| p.dim()).collect();
    let mut adagrad = AdaGradState::new(&dims, config.eta);
    let mut disp = config.initial_dispersion(num_latents);
    let s = config.effective_samples();
    let j = config.method.mixture_components();

    let mut trace = RunTrace::new(model_name, config.method.name(), config.seed);
    let mut clock = Clock::new(config.fake_clock);
    trace.push(TraceRow {
        iteration: 0,
        elapsed_seconds: clock.elapsed(),
        elbo: elbo_estimate(model, &q, rng)?,
        avg_variance: f64::NAN,
        metric: model.metric(&q),
        mean_tau: disp.mean_tau(),
    });

    let mut iteration: u64 = 0;
    loop {
        if clock.elapsed() >= config.budget_seconds {
            break;
        }
        if let Some(cap) = config.max_iters {
            if iteration >= cap {
                break;
            }
        }
        iteration += 1;

        let (grad, batch) =
            match obbvi_gradient_with_batch(model, &q, &disp, s, j, rng, config.parallel) {
                Ok(out) => out,
                Err(first) => {
                    log::warn!("iteration {iteration}: gradient failed ({first}); retrying");
                    match obbvi_gradient_with_batch(model, &q, &disp, s, j, rng, config.parallel)
                    {
                        Ok(out) => out,
                        Err(second) => {
                            log::error!("iteration {iteration}: retry failed ({second})");
                            return Err(Error::RunAborted {
                                iteration,
                                source: Box::new(second),
                            });
                        }
                    }
                }
            };

        if disp.adapts() {
            let grads: Vec<Vec<f64>> = (0..num_latents)
                .map(|n| variance_grad_tau(&q[n], n, &batch, &disp))
                .collect::<Result<_>>()?;
            disp = update_tau(&disp, &grads);
        }

        let grad_unc: Vec<Vec<f64>> = grad
            .values
            .iter()
            .zip(&unc)
            .map(|(g_row, u)| {
                let chain = u.grad_chain();
                g_row.iter().zip(chain).map(|(g, c)| g * c).collect()
            })
            .collect();
        let steps = adagrad.step(&grad_unc)?;
        for ((u, step_row), q_n) in unc.iter_mut().zip(&steps).zip(q.iter_mut()) {
            for (v, step) in u.values.iter_mut().zip(step_row) {
                *v += step;
            }
            *q_n = u.to_family()?;
        }

        clock.tick();
        if iteration.is_multiple_of(config.eval_interval) {
            check_in_domain(&q)?;
            trace.push(TraceRow {
                iteration,
                elapsed_seconds: clock.elapsed(),
                elbo: elbo_estimate(model, &q, rng)?,
                avg_variance: sample_variance_summary(&grad),
                metric: model.metric(&q),
                mean_tau: disp.mean_tau(),
            });
        }
    }
    Ok(trace)
}
