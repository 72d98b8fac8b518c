//! Poisson deep exponential family for word counts.
//!
//! Layered latent-variable model of a document/word count matrix:
//!
//! ```text
//! w0_kv    ~ Gamma(alpha_w, beta_w)                      layer-0 weights
//! wl_kk'   ~ Gamma(alpha_w, beta_w)                      layer l >= 1
//! zL_dk    ~ Poisson(lambda_z)                           top layer
//! zl_dk    ~ Poisson(sum_k' z(l+1)_dk' wl_k'k)           1 <= l < L
//! x_dv     ~ Poisson(sum_k' z1_dk' w0_k'v)
//! ```
//!
//! Poisson rates are floored at a small constant before taking logs, so
//! an all-zero upper layer cannot produce a -inf log-joint.

use crate::error::Result;
use crate::expfam::FamilyParams;
use crate::model::{Assignment, LatentVarId, Model};

/// Rate floor for Poisson terms whose rate is an inner product of
/// latents that may all be zero.
pub const RATE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DefHyperparams {
    pub alpha_w: f64,
    pub beta_w: f64,
    pub lambda_z: f64,
    /// Number of latent Poisson layers (L >= 1).
    pub layers: usize,
    /// Factors per layer.
    pub k: usize,
}

impl Default for DefHyperparams {
    fn default() -> Self {
        DefHyperparams {
            alpha_w: 0.1,
            beta_w: 0.3,
            lambda_z: 0.1,
            layers: 2,
            k: 10,
        }
    }
}

/// Poisson DEF bound to training counts, with a held-out count matrix
/// for the perplexity metric.
#[derive(Debug, Clone)]
pub struct DefModel {
    pub hp: DefHyperparams,
    /// Training counts `[doc][word]`.
    pub x: Vec<Vec<u32>>,
    /// Held-out counts `[doc][word]`; rows may be all zero.
    pub heldout: Vec<Vec<u32>>,
    pub num_docs: usize,
    pub vocab_size: usize,
}

impl DefModel {
    pub fn new(hp: DefHyperparams, x: Vec<Vec<u32>>, heldout: Vec<Vec<u32>>) -> Self {
        assert!(hp.layers >= 1 && hp.k >= 1);
        assert_eq!(x.len(), heldout.len());
        let num_docs = x.len();
        let vocab_size = x.first().map_or(0, |row| row.len());
        assert!(num_docs > 0 && vocab_size > 0);
        DefModel {
            hp,
            x,
            heldout,
            num_docs,
            vocab_size,
        }
    }

    #[inline]
    fn kk(&self) -> usize {
        self.hp.k * self.hp.k
    }

    #[inline]
    pub fn w0_id(&self, k: usize, v: usize) -> LatentVarId {
        LatentVarId(k * self.vocab_size + v)
    }

    /// Weights between layer `l+1` and layer `l`, for `1 <= l < L`;
    /// `upper` indexes the layer-(l+1) factor, `lower` the layer-l factor.
    #[inline]
    pub fn wmid_id(&self, l: usize, upper: usize, lower: usize) -> LatentVarId {
        debug_assert!((1..self.hp.layers).contains(&l));
        LatentVarId(
            self.hp.k * self.vocab_size + (l - 1) * self.kk() + upper * self.hp.k + lower,
        )
    }

    /// Layer-`l` activation for document `d`, factor `k`, `1 <= l <= L`.
    #[inline]
    pub fn z_id(&self, l: usize, d: usize, k: usize) -> LatentVarId {
        debug_assert!((1..=self.hp.layers).contains(&l));
        LatentVarId(
            self.hp.k * self.vocab_size
                + (self.hp.layers - 1) * self.kk()
                + (l - 1) * self.num_docs * self.hp.k
                + d * self.hp.k
                + k,
        )
    }

    fn poisson_at(count: f64, rate: f64) -> Result<f64> {
        FamilyParams::poisson(rate.max(RATE_FLOOR))
            .expect("floored rate is positive")
            .log_density(count)
    }

    /// log Poisson(x_dv; sum_k z1_dk w0_kv)
    fn lik_term(&self, d: usize, v: usize, z: &Assignment<'_>) -> Result<f64> {
        let mut rate = 0.0;
        for k in 0..self.hp.k {
            rate += z.value(self.z_id(1, d, k))? * z.value(self.w0_id(k, v))?;
        }
        Self::poisson_at(f64::from(self.x[d][v]), rate)
    }

    /// Prior term of z at layer `l`, document `d`, factor `k`.
    fn z_term(&self, l: usize, d: usize, k: usize, z: &Assignment<'_>) -> Result<f64> {
        let id = self.z_id(l, d, k);
        let value = z.value(id)?;
        if l == self.hp.layers {
            FamilyParams::poisson(self.hp.lambda_z)
                .expect("positive hyperparameter")
                .log_density(value)
                .map_err(|e| e.at_latent(id.0))
        } else {
            let mut rate = 0.0;
            for upper in 0..self.hp.k {
                rate += z.value(self.z_id(l + 1, d, upper))? * z.value(self.wmid_id(l, upper, k))?;
            }
            Self::poisson_at(value, rate).map_err(|e| e.at_latent(id.0))
        }
    }

    fn w_prior(&self) -> FamilyParams {
        FamilyParams::gamma_shape_mean(self.hp.alpha_w, self.hp.alpha_w / self.hp.beta_w)
            .expect("positive hyperparameters")
    }

    /// Per-document word distribution reconstructed from variational
    /// means, normalized over the vocabulary.
    pub fn reconstruction(&self, q: &[FamilyParams]) -> Vec<Vec<f64>> {
        let (k, v) = (self.hp.k, self.vocab_size);
        let mut probs = Vec::with_capacity(self.num_docs);
        for d in 0..self.num_docs {
            let mut row = vec![0.0; v];
            for vi in 0..v {
                let mut r = 0.0;
                for ki in 0..k {
                    r += q[self.z_id(1, d, ki).0].mean() * q[self.w0_id(ki, vi).0].mean();
                }
                row[vi] = r.max(RATE_FLOOR);
            }
            let total: f64 = row.iter().sum();
            for p in &mut row {
                *p /= total;
            }
            probs.push(row);
        }
        probs
    }

    /// Held-out perplexity: exp of the negative average held-out word
    /// log-probability under the reconstructed per-document multinomial.
    /// Documents without held-out words are excluded.
    pub fn perplexity(&self, q: &[FamilyParams]) -> f64 {
        let probs = self.reconstruction(q);
        let mut log_prob_sum = 0.0;
        let mut held_words = 0u64;
        for (held_row, prob_row) in self.heldout.iter().zip(&probs) {
            let doc_held: u32 = held_row.iter().sum();
            if doc_held == 0 {
                continue;
            }
            for (&c, p) in held_row.iter().zip(prob_row) {
                if c > 0 {
                    log_prob_sum += f64::from(c) * p.ln();
                }
            }
            held_words += u64::from(doc_held);
        }
        if held_words == 0 {
            return f64::NAN;
        }
        (-log_prob_sum / held_words as f64).exp()
    }
}

impl Model for DefModel {
    fn num_latents(&self) -> usize {
        self.hp.k * self.vocab_size
            + (self.hp.layers - 1) * self.kk()
            + self.hp.layers * self.num_docs * self.hp.k
    }

    fn blanket(&self, id: LatentVarId) -> Vec<LatentVarId> {
        let (k, v, l_max) = (self.hp.k, self.vocab_size, self.hp.layers);
        let w0_end = k * v;
        let wmid_end = w0_end + (l_max - 1) * self.kk();
        let mut out = Vec::new();
        if id.0 < w0_end {
            let (ki, vi) = (id.0 / v, id.0 % v);
            for kk in 0..k {
                if kk != ki {
                    out.push(self.w0_id(kk, vi));
                }
            }
            for d in 0..self.num_docs {
                for kk in 0..k {
                    out.push(self.z_id(1, d, kk));
                }
            }
        } else if id.0 < wmid_end {
            let rest = id.0 - w0_end;
            let l = rest / self.kk() + 1;
            let upper = (rest % self.kk()) / k;
            let lower = rest % k;
            for u in 0..k {
                if u != upper {
                    out.push(self.wmid_id(l, u, lower));
                }
            }
            for d in 0..self.num_docs {
                for u in 0..k {
                    out.push(self.z_id(l + 1, d, u));
                }
                out.push(self.z_id(l, d, lower));
            }
        } else {
            let rest = id.0 - wmid_end;
            let l = rest / (self.num_docs * k) + 1;
            let d = (rest % (self.num_docs * k)) / k;
            let ki = rest % k;
            // Own prior reads the layer above (or nothing at the top).
            if l < l_max {
                for u in 0..k {
                    out.push(self.z_id(l + 1, d, u));
                    out.push(self.wmid_id(l, u, ki));
                }
            }
            // Sibling factors share every term this variable appears in.
            for kk in 0..k {
                if kk != ki {
                    out.push(self.z_id(l, d, kk));
                }
            }
            // Children: the layer below (or the observations for l = 1).
            if l == 1 {
                for vi in 0..v {
                    for kk in 0..k {
                        out.push(self.w0_id(kk, vi));
                    }
                }
            } else {
                for lower in 0..k {
                    out.push(self.z_id(l - 1, d, lower));
                    for u in 0..k {
                        out.push(self.wmid_id(l - 1, u, lower));
                    }
                }
            }
            out.sort_unstable();
            out.dedup();
        }
        out
    }

    fn log_joint(&self, z: &[f64]) -> Result<f64> {
        let assign = Assignment::new(z);
        let (k, v, l_max) = (self.hp.k, self.vocab_size, self.hp.layers);
        let w_prior = self.w_prior();
        let mut total = 0.0;
        for ki in 0..k {
            for vi in 0..v {
                let id = self.w0_id(ki, vi);
                total += w_prior
                    .log_density(assign.value(id)?)
                    .map_err(|e| e.at_latent(id.0))?;
            }
        }
        for l in 1..l_max {
            for upper in 0..k {
                for lower in 0..k {
                    let id = self.wmid_id(l, upper, lower);
                    total += w_prior
                        .log_density(assign.value(id)?)
                        .map_err(|e| e.at_latent(id.0))?;
                }
            }
        }
        for l in 1..=l_max {
            for d in 0..self.num_docs {
                for ki in 0..k {
                    total += self.z_term(l, d, ki, &assign)?;
                }
            }
        }
        for d in 0..self.num_docs {
            for vi in 0..v {
                total += self.lik_term(d, vi, &assign)?;
            }
        }
        Ok(total)
    }

    fn local_log_joint(&self, id: LatentVarId, z: Assignment<'_>) -> Result<f64> {
        let (k, v, l_max) = (self.hp.k, self.vocab_size, self.hp.layers);
        let w0_end = k * v;
        let wmid_end = w0_end + (l_max - 1) * self.kk();
        let mut total = 0.0;
        if id.0 < w0_end {
            let vi = id.0 % v;
            total += self
                .w_prior()
                .log_density(z.value(id)?)
                .map_err(|e| e.at_latent(id.0))?;
            for d in 0..self.num_docs {
                total += self.lik_term(d, vi, &z)?;
            }
        } else if id.0 < wmid_end {
            let rest = id.0 - w0_end;
            let l = rest / self.kk() + 1;
            let lower = rest % k;
            total += self
                .w_prior()
                .log_density(z.value(id)?)
                .map_err(|e| e.at_latent(id.0))?;
            for d in 0..self.num_docs {
                total += self.z_term(l, d, lower, &z)?;
            }
        } else {
            let rest = id.0 - wmid_end;
            let l = rest / (self.num_docs * k) + 1;
            let d = (rest % (self.num_docs * k)) / k;
            let ki = rest % k;
            total += self.z_term(l, d, ki, &z)?;
            if l == 1 {
                for vi in 0..v {
                    total += self.lik_term(d, vi, &z)?;
                }
            } else {
                for lower in 0..k {
                    total += self.z_term(l - 1, d, lower, &z)?;
                }
            }
        }
        Ok(total)
    }

    fn init_variational(&self) -> Vec<FamilyParams> {
        let gamma = FamilyParams::gamma_shape_mean(1.0, 1.0).unwrap();
        let poisson = FamilyParams::poisson(1.0).unwrap();
        let n_weights = self.hp.k * self.vocab_size + (self.hp.layers - 1) * self.kk();
        let n_z = self.hp.layers * self.num_docs * self.hp.k;
        let mut q = Vec::with_capacity(n_weights + n_z);
        q.extend(std::iter::repeat_n(gamma, n_weights));
        q.extend(std::iter::repeat_n(poisson, n_z));
        q
    }

    fn metric(&self, q: &[FamilyParams]) -> f64 {
        self.perplexity(q)
    }

    fn metric_name(&self) -> &'static str {
        "heldout_perplexity"
    }
}
