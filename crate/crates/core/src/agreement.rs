//! Variance-components model for comparing two outcome methods on replicated
//! tests: `y_mpr = alpha_m + u_p + a_pr + c_mp + e_mpr`, with all random
//! effects in non-centred form.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, SummaryRow};
use crate::dist::{half_cauchy_dlpdf, half_cauchy_lpdf, LN_2PI};
use crate::sampler::{self, LogDensity, SamplerConfig, SamplerError};
use crate::synthgen::AgreementRow;

/// Prior SD of the method means.
pub const ALPHA_PRIOR_SD: f64 = 1e4;

/// Scale of the half-Cauchy prior on every standard deviation.
pub const SD_PRIOR_SCALE: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("expected exactly two methods, found {0}")]
    MethodCount(usize),
    #[error("participant {participant} replicate {replicate} has {found} value(s) for method {method}, expected 1")]
    Unbalanced {
        participant: u64,
        replicate: u64,
        method: u64,
        found: usize,
    },
    #[error("non-finite outcome for participant {participant} replicate {replicate}")]
    NonFinite { participant: u64, replicate: u64 },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

/// Model variants. Only the first two take part in acceptance; the full model
/// is weakly identified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// No replicate effect, residual SD per method.
    Exchangeable,
    /// Replicate effect shared by both methods, common residual SD.
    Linked,
    /// Replicate effect and residual SD per method.
    ExperimentalFull,
}

impl Variant {
    fn has_replicate_effect(self) -> bool {
        !matches!(self, Variant::Exchangeable)
    }

    fn per_method_sigma(self) -> bool {
        !matches!(self, Variant::Linked)
    }

    /// Names of the sampled scalar parameters, in storage order.
    pub fn param_names(self) -> Vec<&'static str> {
        let mut n = vec!["alpha1", "alpha2", "gamma", "tau"];
        if self.has_replicate_effect() {
            n.push("omega");
        }
        if self.per_method_sigma() {
            n.extend(["sigma1", "sigma2"]);
        } else {
            n.push("sigma");
        }
        n
    }
}

/// Balanced outcomes: each (participant, replicate) pair carries exactly one
/// value per method.
#[derive(Debug, Clone, PartialEq)]
pub struct AgreementData {
    /// `y[m][i]` for observation pair `i`.
    y: [Vec<f64>; 2],
    participant: Vec<usize>,
    /// Index of the (participant, replicate) pair.
    pair: Vec<usize>,
    n_participants: usize,
    method_labels: [u64; 2],
}

impl AgreementData {
    /// Methods are ordered by label, so the smaller label is method 1.
    pub fn new(rows: &[AgreementRow]) -> Result<Self, AgreementError> {
        let mut methods: Vec<u64> = rows.iter().map(|r| r.method as u64).collect();
        methods.sort_unstable();
        methods.dedup();
        if !rows.is_empty() && methods.len() != 2 {
            return Err(AgreementError::MethodCount(methods.len()));
        }
        let labels = if rows.is_empty() { [0, 1] } else { [methods[0], methods[1]] };

        let mut cells: BTreeMap<(u64, u64), [Vec<f64>; 2]> = BTreeMap::new();
        for r in rows {
            let key = (r.participant as u64, r.replicate as u64);
            if !r.value.is_finite() {
                return Err(AgreementError::NonFinite {
                    participant: key.0,
                    replicate: key.1,
                });
            }
            let m = usize::from(r.method as u64 == labels[1]);
            cells.entry(key).or_default()[m].push(r.value);
        }
        let mut data = Self {
            y: [Vec::new(), Vec::new()],
            participant: Vec::new(),
            pair: Vec::new(),
            n_participants: 0,
            method_labels: labels,
        };
        let mut last_participant = None;
        for (i, ((p, r), vals)) in cells.into_iter().enumerate() {
            for m in 0..2 {
                if vals[m].len() != 1 {
                    return Err(AgreementError::Unbalanced {
                        participant: p,
                        replicate: r,
                        method: labels[m],
                        found: vals[m].len(),
                    });
                }
                data.y[m].push(vals[m][0]);
            }
            if last_participant != Some(p) {
                data.n_participants += 1;
                last_participant = Some(p);
            }
            data.participant.push(data.n_participants - 1);
            data.pair.push(i);
        }
        Ok(data)
    }

    pub fn n_participants(&self) -> usize {
        self.n_participants
    }

    /// Number of (participant, replicate) pairs.
    pub fn n_pairs(&self) -> usize {
        self.pair.len()
    }

    pub fn method_labels(&self) -> [u64; 2] {
        self.method_labels
    }
}

/// Posterior of one variant on unconstrained coordinates: the two means, the
/// logs of the SDs, then the latent effects `z_u` (per participant), `z_c`
/// (per participant and method) and `z_a` (per pair, when present).
#[derive(Debug, Clone)]
pub struct AgreementModel {
    data: AgreementData,
    variant: Variant,
}

impl AgreementModel {
    pub fn new(data: AgreementData, variant: Variant) -> Self {
        Self { data, variant }
    }

    fn n_scalar(&self) -> usize {
        self.variant.param_names().len()
    }

    fn sigma_index(&self) -> usize {
        if self.variant.has_replicate_effect() {
            5
        } else {
            4
        }
    }

    /// Natural-scale scalar parameters from an unconstrained point.
    pub fn scalars(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_scalar())
            .map(|j| if j < 2 { x[j] } else { x[j].exp() })
            .collect()
    }

    /// Unnormalised log posterior including the log-Jacobian of the SD
    /// transforms. Written against `grad` in the same pass.
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let d = &self.data;
        let np = d.n_participants;
        let ns = self.n_scalar();
        let (zu0, zc0) = (ns, ns + np);
        let za0 = zc0 + 2 * np;
        let s = self.scalars(x);
        let (gamma, tau) = (s[2], s[3]);
        let omega = if self.variant.has_replicate_effect() { s[4] } else { 0.0 };
        let si = self.sigma_index();
        let sigma = if self.variant.per_method_sigma() { [s[si], s[si + 1]] } else { [s[si], s[si]] };

        let mut lp = 0.0;
        let mut g_nat = vec![0.0; ns];
        for (j, &a) in s[..2].iter().enumerate() {
            lp += -0.5 * (a / ALPHA_PRIOR_SD).powi(2);
            g_nat[j] = -a / (ALPHA_PRIOR_SD * ALPHA_PRIOR_SD);
        }
        for j in 2..ns {
            lp += half_cauchy_lpdf(s[j], SD_PRIOR_SCALE);
            g_nat[j] = half_cauchy_dlpdf(s[j], SD_PRIOR_SCALE);
        }
        for j in ns..x.len() {
            lp += -0.5 * x[j] * x[j] - 0.5 * LN_2PI;
            grad[j] = -x[j];
        }

        let mut g_sigma = [0.0; 2];
        let mut ll = 0.0;
        for i in 0..d.n_pairs() {
            let p = d.participant[i];
            let shared = gamma * x[zu0 + p] + omega * if self.variant.has_replicate_effect() { x[za0 + d.pair[i]] } else { 0.0 };
            for m in 0..2 {
                let zc = x[zc0 + 2 * p + m];
                let r = d.y[m][i] - s[m] - shared - tau * zc;
                let inv = 1.0 / (sigma[m] * sigma[m]);
                ll += -0.5 * r * r * inv - sigma[m].ln() - 0.5 * LN_2PI;
                let w = r * inv;
                g_nat[m] += w;
                g_nat[2] += w * x[zu0 + p];
                grad[zu0 + p] += w * gamma;
                g_nat[3] += w * zc;
                grad[zc0 + 2 * p + m] += w * tau;
                if self.variant.has_replicate_effect() {
                    g_nat[4] += w * x[za0 + d.pair[i]];
                    grad[za0 + d.pair[i]] += w * omega;
                }
                g_sigma[m] += r * r * inv / sigma[m] - 1.0 / sigma[m];
            }
        }
        if self.variant.per_method_sigma() {
            g_nat[si] += g_sigma[0];
            g_nat[si + 1] += g_sigma[1];
        } else {
            g_nat[si] += g_sigma[0] + g_sigma[1];
        }
        lp += ll;
        for j in 0..ns {
            if j < 2 {
                grad[j] = g_nat[j];
            } else {
                grad[j] = g_nat[j] * s[j] + 1.0;
                lp += x[j];
            }
        }
        lp
    }

    fn initial_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mean = |m: usize| diagnostics::mean(&self.data.y[m]);
        let mut x = Vec::with_capacity(self.dim());
        for m in 0..2 {
            let centre = if self.data.n_pairs() > 0 { mean(m) } else { 0.0 };
            x.push(centre + rng.random_range(-1.0..1.0));
        }
        for _ in 2..self.n_scalar() {
            x.push(rng.random_range(-2.0..1.0));
        }
        while x.len() < self.dim() {
            x.push(rng.random_range(-1.0..1.0));
        }
        x
    }
}

impl LogDensity for AgreementModel {
    fn dim(&self) -> usize {
        let latent_pairs = if self.variant.has_replicate_effect() { self.data.n_pairs() } else { 0 };
        self.n_scalar() + 3 * self.data.n_participants + latent_pairs
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.eval(x, grad)
    }
}

/// Posterior summaries of an agreement fit, with draws kept for derived
/// comparisons.
#[derive(Debug, Clone)]
pub struct VarCompFit {
    pub variant: Variant,
    /// Sampled parameters followed by `alpha_diff` and, with per-method
    /// residuals, `sigma_ratio`.
    pub names: Vec<String>,
    /// `[chain][iteration][quantity]`.
    pub chains: Vec<Vec<Vec<f64>>>,
    pub divergences: usize,
    pub warnings: Vec<String>,
}

impl VarCompFit {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn quantity_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|d| d[j]).collect()).collect()
    }

    pub fn summary(&self, probs: &[f64]) -> Vec<SummaryRow> {
        self.names
            .iter()
            .enumerate()
            .map(|(j, n)| SummaryRow::from_chains(n.clone(), &self.quantity_chains(j), probs))
            .collect()
    }

    pub fn row(&self, name: &str, probs: &[f64]) -> Option<SummaryRow> {
        self.index(name)
            .map(|j| SummaryRow::from_chains(name, &self.quantity_chains(j), probs))
    }

    pub fn flagged(&self, limit: f64) -> bool {
        self.summary(&[0.5]).iter().any(|r| r.exceeds_rhat(limit))
    }
}

pub fn fit_agreement(data: AgreementData, variant: Variant, cfg: &SamplerConfig) -> Result<VarCompFit, AgreementError> {
    let model = AgreementModel::new(data, variant);
    let out = sampler::run(&model, cfg, |rng: &mut ChaCha8Rng| model.initial_point(rng))?;
    let mut names: Vec<String> = variant.param_names().iter().map(|s| s.to_string()).collect();
    names.push("alpha_diff".into());
    if variant.per_method_sigma() {
        names.push("sigma_ratio".into());
    }
    let si = model.sigma_index();
    let chains = out
        .iter()
        .map(|c| {
            c.draws
                .iter()
                .map(|x| {
                    let mut s = model.scalars(x);
                    s.push(s[0] - s[1]);
                    if variant.per_method_sigma() {
                        s.push(s[si] / s[si + 1]);
                    }
                    s
                })
                .collect()
        })
        .collect();
    let divergences: usize = out.iter().map(|c| c.divergences()).sum();
    let total: usize = out.iter().map(|c| c.draws.len()).sum();
    let mut warnings = Vec::new();
    if divergences as f64 > crate::inference::DIVERGENCE_WARN_RATE * total as f64 {
        warnings.push(format!("{divergences} of {total} post-warmup transitions diverged"));
    }
    Ok(VarCompFit {
        variant,
        names,
        chains,
        divergences,
        warnings,
    })
}

pub fn fit_agreement_exchangeable(data: AgreementData, cfg: &SamplerConfig) -> Result<VarCompFit, AgreementError> {
    fit_agreement(data, Variant::Exchangeable, cfg)
}

pub fn fit_agreement_linked(data: AgreementData, cfg: &SamplerConfig) -> Result<VarCompFit, AgreementError> {
    fit_agreement(data, Variant::Linked, cfg)
}
