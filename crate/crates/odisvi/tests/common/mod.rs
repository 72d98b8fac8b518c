//! Shared independent oracles for the integration suites.
//!
//! Everything here is deliberately written against raw formulas rather
//! than the library's distribution code, so it can stand as an
//! independent check of the implementation path.

#![allow(dead_code)]

pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Hand-written normal log-density.
pub fn normal_logpdf(z: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln()) - (z - mean) * (z - mean) / (2.0 * var)
}

/// Score of the (mean, variance) parameterization, written from scratch.
pub fn normal_score(z: f64, mean: f64, var: f64) -> [f64; 2] {
    let d = z - mean;
    [d / var, -0.5 / var + d * d / (2.0 * var * var)]
}

/// Adaptive Simpson quadrature. The interval is pre-split into panels so
/// sharply concentrated integrands cannot slip through the coarse first
/// probes of a very wide interval.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let width = (b - a) / PANELS as f64;
    (0..PANELS)
        .map(|i| {
            let lo = a + i as f64 * width;
            integrate_panel(f, lo, lo + width, tol / PANELS as f64)
        })
        .sum()
}

fn integrate_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Toy conjugate model oracle: prior N(prior_mean, prior_var),
/// observations x_i ~ N(z, lik_var). Everything below is independent of
/// the library's ToyModel implementation.
#[derive(Clone)]
pub struct ToyOracle {
    pub prior_mean: f64,
    pub prior_var: f64,
    pub lik_var: f64,
    pub data: Vec<f64>,
}

impl ToyOracle {
    pub fn log_joint(&self, z: f64) -> f64 {
        let mut total = normal_logpdf(z, self.prior_mean, self.prior_var);
        for &x in &self.data {
            total += normal_logpdf(x, z, self.lik_var);
        }
        total
    }

    /// f_c(z) for q = N(mq, vq): score times (log p - log q).
    pub fn f(&self, z: f64, mq: f64, vq: f64) -> [f64; 2] {
        let gap = self.log_joint(z) - normal_logpdf(z, mq, vq);
        let h = normal_score(z, mq, vq);
        [h[0] * gap, h[1] * gap]
    }

    /// Exact ELBO gradient for q = N(mq, vq).
    pub fn elbo_grad(&self, mq: f64, vq: f64) -> [f64; 2] {
        let n = self.data.len() as f64;
        let d_m = -(mq - self.prior_mean) / self.prior_var
            + self.data.iter().map(|&x| (x - mq) / self.lik_var).sum::<f64>();
        let d_v = -0.5 / self.prior_var - 0.5 * n / self.lik_var + 0.5 / vq;
        [d_m, d_v]
    }

    /// E_q[f_c^2] by quadrature, one entry per parameter component.
    pub fn quad_ef2(&self, mq: f64, vq: f64) -> [f64; 2] {
        let sd = vq.sqrt();
        let (a, b) = (mq - 20.0 * sd, mq + 20.0 * sd);
        std::array::from_fn(|c| {
            let integrand = |z: f64| {
                let f = self.f(z, mq, vq)[c];
                f * f * normal_logpdf(z, mq, vq).exp()
            };
            integrate(&integrand, a, b, 1e-12)
        })
    }

    /// E_q[f_c^2 q/r] by quadrature for the overdispersed proposal
    /// r = N(mq, tau * vq). The integrand decays at least like the
    /// narrower q^2/r envelope, so 20 proposal deviations is generous.
    pub fn quad_ef2_weighted(&self, mq: f64, vq: f64, tau: f64) -> [f64; 2] {
        let sd = (tau * vq).sqrt();
        let (a, b) = (mq - 20.0 * sd, mq + 20.0 * sd);
        std::array::from_fn(|c| {
            let integrand = |z: f64| {
                let f = self.f(z, mq, vq)[c];
                let log_q = normal_logpdf(z, mq, vq);
                let log_r = normal_logpdf(z, mq, tau * vq);
                f * f * (2.0 * log_q - log_r).exp()
            };
            integrate(&integrand, a, b, 1e-12)
        })
    }

    /// Variance (per component, summed) of the single-sample O-BB term at
    /// dispersion tau, from quadrature: sum_c E_q[f_c^2 q/r] - (grad_c)^2.
    pub fn quad_variance_sum(&self, mq: f64, vq: f64, tau: f64) -> f64 {
        let ef2 = self.quad_ef2_weighted(mq, vq, tau);
        let g = self.elbo_grad(mq, vq);
        (ef2[0] - g[0] * g[0]) + (ef2[1] - g[1] * g[1])
    }
}

/// Median of a slice (destructive on a copy).
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}
