//! Gamma-normal time series model.
//!
//! Latent factors follow gamma chains in the expectation/variance
//! parameterization, observations are Gaussian around a factorized mean:
//!
//! ```text
//! w_kd ~ N(0, sigma_w^2)                 k < K, d < D
//! o_nd ~ N(0, sigma_o^2)                 n < N, d < D
//! z_n0k ~ GammaE(sigma_z, sigma_z)
//! z_ntk ~ GammaE(z_n(t-1)k, sigma_z)     0 < t < T
//! x_ndt ~ N(o_nd + sum_k z_ntk w_kd, sigma_x^2)
//! ```
//!
//! Generation draws one extra time step which is held out for the
//! predictive metric.

use std::io::{Read, Write};

use rand_distr::Distribution;

use crate::error::{Error, Result};
use crate::expfam::FamilyParams;
use crate::model::{Assignment, LatentVarId, Model};
use crate::rng::RandomStream;

/// Floor applied to gamma-chain means so the implied shape z^2/sigma_z
/// stays representable; values this small are numerically indistinct.
const CHAIN_MEAN_FLOOR: f64 = 1e-150;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct GntsHyperparams {
    pub sigma_w2: f64,
    pub sigma_o2: f64,
    pub sigma_z: f64,
    pub sigma_x2: f64,
}

impl Default for GntsHyperparams {
    fn default() -> Self {
        GntsHyperparams {
            sigma_w2: 1.0,
            sigma_o2: 1.0,
            sigma_z: 1.0,
            sigma_x2: 0.01,
        }
    }
}

/// Observed tensor plus the held-out extra time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GntsDataset {
    pub n: usize,
    pub t: usize,
    pub d: usize,
    /// Training observations, indexed `[n][d][t]`.
    pub x: Vec<f64>,
    /// Held-out observations at time T, indexed `[n][d]`.
    pub heldout: Vec<f64>,
}

impl GntsDataset {
    #[inline]
    pub fn x_at(&self, n: usize, d: usize, t: usize) -> f64 {
        self.x[(n * self.d + d) * self.t + t]
    }

    /// Persist as `GNTS` + (N, T_total, D) as little-endian u32 + the
    /// full tensor (training steps then the held-out step) as
    /// little-endian f64, indexed `[n][d][t]`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"GNTS")?;
        let t_total = (self.t + 1) as u32;
        out.write_all(&(self.n as u32).to_le_bytes())?;
        out.write_all(&t_total.to_le_bytes())?;
        out.write_all(&(self.d as u32).to_le_bytes())?;
        for n in 0..self.n {
            for d in 0..self.d {
                for t in 0..self.t {
                    out.write_all(&self.x_at(n, d, t).to_le_bytes())?;
                }
                out.write_all(&self.heldout[n * self.d + d].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != b"GNTS" {
            return Err(Error::Data("bad magic, expected GNTS".into()));
        }
        let mut dims = [0u8; 12];
        input.read_exact(&mut dims)?;
        let n = u32::from_le_bytes(dims[0..4].try_into().unwrap()) as usize;
        let t_total = u32::from_le_bytes(dims[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(dims[8..12].try_into().unwrap()) as usize;
        if t_total < 2 {
            return Err(Error::Data(format!(
                "need at least 2 time steps (one held out), got {t_total}"
            )));
        }
        let t = t_total - 1;
        let mut x = vec![0.0; n * d * t];
        let mut heldout = vec![0.0; n * d];
        let mut buf = [0u8; 8];
        for ni in 0..n {
            for di in 0..d {
                for ti in 0..t_total {
                    input.read_exact(&mut buf)?;
                    let v = f64::from_le_bytes(buf);
                    if !v.is_finite() {
                        return Err(Error::Data(format!("non-finite value at ({ni},{di},{ti})")));
                    }
                    if ti < t {
                        x[(ni * d + di) * t + ti] = v;
                    } else {
                        heldout[ni * d + di] = v;
                    }
                }
            }
        }
        Ok(GntsDataset { n, t, d, x, heldout })
    }
}

/// True latents returned by the generator, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct GntsLatents {
    /// `[k][d]`
    pub w: Vec<f64>,
    /// `[n][d]`
    pub o: Vec<f64>,
    /// `[n][t][k]`, includes the held-out step T
    pub z: Vec<f64>,
}

/// Number of latent variables for the given dimensions.
pub fn gnts_latent_count(n: u64, t: u64, d: u64, k: u64) -> u64 {
    k * d + n * d + n * t * k
}

fn gamma_e(mean: f64, var: f64) -> Result<FamilyParams> {
    FamilyParams::gamma_exp_var(mean.max(CHAIN_MEAN_FLOOR), var)
}

/// Draw a synthetic dataset (with one held-out time step) and the true
/// latents, exactly following the generative process.
pub fn gnts_generate(
    n: usize,
    t: usize,
    d: usize,
    k: usize,
    hp: &GntsHyperparams,
    rng: &mut RandomStream,
) -> (GntsDataset, GntsLatents) {
    assert!(n >= 1 && t >= 1 && d >= 1 && k >= 1);
    let normal = |var: f64, rng: &mut RandomStream| {
        rand_distr::Normal::new(0.0, var.sqrt()).unwrap().sample(rng)
    };
    let t_total = t + 1;

    let w: Vec<f64> = (0..k * d).map(|_| normal(hp.sigma_w2, rng)).collect();
    let o: Vec<f64> = (0..n * d).map(|_| normal(hp.sigma_o2, rng)).collect();

    let mut z = vec![0.0; n * t_total * k];
    for ni in 0..n {
        for ti in 0..t_total {
            for ki in 0..k {
                let mean = if ti == 0 {
                    hp.sigma_z
                } else {
                    z[(ni * t_total + ti - 1) * k + ki]
                };
                let prior = gamma_e(mean, hp.sigma_z).expect("positive chain mean");
                z[(ni * t_total + ti) * k + ki] = prior.sample(rng).max(CHAIN_MEAN_FLOOR);
            }
        }
    }

    let mut x = vec![0.0; n * d * t];
    let mut heldout = vec![0.0; n * d];
    for ni in 0..n {
        for di in 0..d {
            for ti in 0..t_total {
                let dot: f64 = (0..k)
                    .map(|ki| z[(ni * t_total + ti) * k + ki] * w[ki * d + di])
                    .sum();
                let value = o[ni * d + di] + dot + normal(hp.sigma_x2, rng);
                if ti < t {
                    x[(ni * d + di) * t + ti] = value;
                } else {
                    heldout[ni * d + di] = value;
                }
            }
        }
    }

    (
        GntsDataset { n, t, d, x, heldout },
        GntsLatents { w, o, z },
    )
}

/// GNTS model bound to a dataset. Latent layout: w block, then o block,
/// then z block in `[n][t][k]` order.
#[derive(Debug, Clone)]
pub struct GntsModel {
    pub k: usize,
    pub hp: GntsHyperparams,
    pub data: GntsDataset,
}

impl GntsModel {
    pub fn new(k: usize, hp: GntsHyperparams, data: GntsDataset) -> Self {
        assert!(k >= 1);
        GntsModel { k, hp, data }
    }

    #[inline]
    pub fn w_id(&self, k: usize, d: usize) -> LatentVarId {
        LatentVarId(k * self.data.d + d)
    }

    #[inline]
    pub fn o_id(&self, n: usize, d: usize) -> LatentVarId {
        LatentVarId(self.k * self.data.d + n * self.data.d + d)
    }

    #[inline]
    pub fn z_id(&self, n: usize, t: usize, k: usize) -> LatentVarId {
        LatentVarId(
            self.k * self.data.d
                + self.data.n * self.data.d
                + (n * self.data.t + t) * self.k
                + k,
        )
    }

    /// log N(x_ndt; o_nd + sum_k z_ntk w_kd, sigma_x^2)
    fn lik_term(&self, n: usize, d: usize, t: usize, z: &Assignment<'_>) -> Result<f64> {
        let mut mean = z.value(self.o_id(n, d))?;
        for ki in 0..self.k {
            mean += z.value(self.z_id(n, t, ki))? * z.value(self.w_id(ki, d))?;
        }
        let lik = FamilyParams::gaussian(mean, self.hp.sigma_x2)
            .map_err(|e| e.at_latent(self.o_id(n, d).0))?;
        lik.log_density(self.data.x_at(n, d, t))
    }

    /// Gamma-chain term for z at (n, t, k).
    fn chain_term(&self, n: usize, t: usize, k: usize, z: &Assignment<'_>) -> Result<f64> {
        let id = self.z_id(n, t, k);
        let mean = if t == 0 {
            self.hp.sigma_z
        } else {
            z.value(self.z_id(n, t - 1, k))?
        };
        let prior = gamma_e(mean, self.hp.sigma_z).map_err(|e| e.at_latent(id.0))?;
        prior.log_density(z.value(id)?).map_err(|e| e.at_latent(id.0))
    }

    /// Predictive means for the held-out step from variational means:
    /// E[o_nd] + sum_k E[z_n(T-1)k] E[w_kd] (the gamma chain is
    /// mean-preserving, so the last training step predicts step T).
    pub fn heldout_predictions(&self, q: &[FamilyParams]) -> Vec<f64> {
        let (n, d) = (self.data.n, self.data.d);
        let mut preds = vec![0.0; n * d];
        for ni in 0..n {
            for di in 0..d {
                let mut pred = q[self.o_id(ni, di).0].mean();
                for ki in 0..self.k {
                    pred += q[self.z_id(ni, self.data.t - 1, ki).0].mean()
                        * q[self.w_id(ki, di).0].mean();
                }
                preds[ni * d + di] = pred;
            }
        }
        preds
    }

    /// Average held-out log-likelihood at the plug-in predictive means.
    /// With `keep_constants` false the Gaussian normalizer is dropped
    /// (identically for every method): only -(x - pred)^2 / (2 sigma_x^2)
    /// is averaged.
    pub fn heldout_avg_loglik(&self, q: &[FamilyParams], keep_constants: bool) -> f64 {
        use crate::expfam::LN_2PI;
        let preds = self.heldout_predictions(q);
        let total: f64 = preds
            .iter()
            .zip(&self.data.heldout)
            .map(|(&pred, &x)| {
                let quad = -(x - pred) * (x - pred) / (2.0 * self.hp.sigma_x2);
                if keep_constants {
                    quad - 0.5 * (LN_2PI + self.hp.sigma_x2.ln())
                } else {
                    quad
                }
            })
            .sum();
        total / preds.len() as f64
    }
}

impl Model for GntsModel {
    fn num_latents(&self) -> usize {
        gnts_latent_count(
            self.data.n as u64,
            self.data.t as u64,
            self.data.d as u64,
            self.k as u64,
        ) as usize
    }

    fn blanket(&self, id: LatentVarId) -> Vec<LatentVarId> {
        let (n, t, d, k) = (self.data.n, self.data.t, self.data.d, self.k);
        let kd = k * d;
        let nd = n * d;
        let mut out = Vec::new();
        if id.0 < kd {
            // w_kd: other w in column d, every o in column d, every z.
            let di = id.0 % d;
            for ki in 0..k {
                let other = self.w_id(ki, di);
                if other != id {
                    out.push(other);
                }
            }
            for ni in 0..n {
                out.push(self.o_id(ni, di));
            }
            for ni in 0..n {
                for ti in 0..t {
                    for ki in 0..k {
                        out.push(self.z_id(ni, ti, ki));
                    }
                }
            }
        } else if id.0 < kd + nd {
            // o_nd: w column d, z rows for this n.
            let rest = id.0 - kd;
            let (ni, di) = (rest / d, rest % d);
            for ki in 0..k {
                out.push(self.w_id(ki, di));
            }
            for ti in 0..t {
                for ki in 0..k {
                    out.push(self.z_id(ni, ti, ki));
                }
            }
        } else {
            // z_ntk: chain neighbours, z siblings at (n, t), all w, o row n.
            let rest = id.0 - kd - nd;
            let ki = rest % k;
            let ti = (rest / k) % t;
            let ni = rest / (k * t);
            if ti > 0 {
                out.push(self.z_id(ni, ti - 1, ki));
            }
            if ti + 1 < t {
                out.push(self.z_id(ni, ti + 1, ki));
            }
            for kk in 0..k {
                if kk != ki {
                    out.push(self.z_id(ni, ti, kk));
                }
            }
            for kk in 0..k {
                for di in 0..d {
                    out.push(self.w_id(kk, di));
                }
            }
            for di in 0..d {
                out.push(self.o_id(ni, di));
            }
        }
        out
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        let assign = Assignment::new(z);
        let (n, t, d, k) = (self.data.n, self.data.t, self.data.d, self.k);
        let mut total = 0.0;
        let w_prior = FamilyParams::gaussian(0.0, self.hp.sigma_w2).unwrap();
        let o_prior = FamilyParams::gaussian(0.0, self.hp.sigma_o2).unwrap();
        for ki in 0..k {
            for di in 0..d {
                let id = self.w_id(ki, di);
                total += w_prior
                    .log_density(assign.value(id)?)
                    .map_err(|e| e.at_latent(id.0))?;
            }
        }
        for ni in 0..n {
            for di in 0..d {
                let id = self.o_id(ni, di);
                total += o_prior
                    .log_density(assign.value(id)?)
                    .map_err(|e| e.at_latent(id.0))?;
            }
        }
        for ni in 0..n {
            for ti in 0..t {
                for ki in 0..k {
                    total += self.chain_term(ni, ti, ki, &assign)?;
                }
            }
        }
        for ni in 0..n {
            for di in 0..d {
                for ti in 0..t {
                    total += self.lik_term(ni, di, ti, &assign)?;
                }
            }
        }
        Ok(total)
    }

    fn local_log_joint(&self, id: LatentVarId, z: Assignment<'_>) -> Result<f64> {
        let (n, t, d, k) = (self.data.n, self.data.t, self.data.d, self.k);
        let kd = k * d;
        let nd = n * d;
        let mut total = 0.0;
        if id.0 < kd {
            let (ki, di) = (id.0 / d, id.0 % d);
            let _ = ki;
            let prior = FamilyParams::gaussian(0.0, self.hp.sigma_w2).unwrap();
            total += prior
                .log_density(z.value(id)?)
                .map_err(|e| e.at_latent(id.0))?;
            for ni in 0..n {
                for ti in 0..t {
                    total += self.lik_term(ni, di, ti, &z)?;
                }
            }
        } else if id.0 < kd + nd {
            let rest = id.0 - kd;
            let (ni, di) = (rest / d, rest % d);
            let prior = FamilyParams::gaussian(0.0, self.hp.sigma_o2).unwrap();
            total += prior
                .log_density(z.value(id)?)
                .map_err(|e| e.at_latent(id.0))?;
            for ti in 0..t {
                total += self.lik_term(ni, di, ti, &z)?;
            }
        } else {
            let rest = id.0 - kd - nd;
            let ki = rest % k;
            let ti = (rest / k) % t;
            let ni = rest / (k * t);
            total += self.chain_term(ni, ti, ki, &z)?;
            if ti + 1 < t {
                total += self.chain_term(ni, ti + 1, ki, &z)?;
            }
            for di in 0..d {
                total += self.lik_term(ni, di, ti, &z)?;
            }
        }
        Ok(total)
    }

    fn init_variational(&self) -> Vec<FamilyParams> {
        let gaussian = FamilyParams::gaussian(0.0, 1.0).unwrap();
        let gamma = FamilyParams::gamma_shape_mean(1.0, 1.0).unwrap();
        let kd = self.k * self.data.d;
        let nd = self.data.n * self.data.d;
        let ntk = self.data.n * self.data.t * self.k;
        let mut q = Vec::with_capacity(kd + nd + ntk);
        q.extend(std::iter::repeat_n(gaussian, kd + nd));
        q.extend(std::iter::repeat_n(gamma, ntk));
        q
    }

    fn metric(&self, q: &[FamilyParams]) -> f64 {
        self.heldout_avg_loglik(q, false)
    }

    fn metric_name(&self) -> &'static str {
        "heldout_avg_loglik"
    }
}
