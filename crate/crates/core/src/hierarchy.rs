//! Two-level model across tests: per-test curve parameters are population
//! values plus correlated random effects, `beta_i = beta + diag(sd_w) L z_i`.
//! The posterior medians of the population level make an informative prior.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{self, SummaryRow, RHAT_BATCH_LIMIT};
use crate::dist::{cholesky, half_cauchy_dlpdf, half_cauchy_lpdf, nearest_positive_definite, MvNormal, LN_2PI};
use crate::inference::{
    self, constrain_beta, draw_from_prior, log_beta_prior_acc, log_likelihood_acc, pull_back_beta,
    unconstrain_beta, InferenceError, PreparedSeries, PriorSpec, N_PARAMS, SIGMA_PRIOR_SCALE,
};
use crate::model::{BreathSeries, CurveParams};
use crate::sampler::{self, ChainOutput, LogDensity, SamplerConfig, SamplerError};

pub const K: usize = 6;
const N_CPC: usize = K * (K - 1) / 2;

/// LKJ shape on the random-effect correlation.
pub const LKJ_ETA: f64 = 2.0;

/// Eigenvalue floor when projecting a median correlation matrix.
pub const PD_FLOOR: f64 = 1e-10;

/// Prior-based starting candidates scored per chain.
const INIT_CANDIDATES: usize = 100;

/// Test count above which per-test likelihoods are evaluated in parallel.
const PAR_MIN_TESTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HierError {
    #[error("the hierarchical model needs at least {needed} tests, got {found}")]
    TooFewTests { needed: usize, found: usize },
    #[error("expected {expected} latent effects, got {found}")]
    LatentShape { expected: usize, found: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("holdout fraction {0} must lie in [0, 1]")]
    Fraction(f64),
}

/// Natural-scale hierarchical parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HierParams {
    pub beta_hyper: [f64; 6],
    pub sd_w: [f64; 6],
    /// Lower Cholesky factor of the random-effect correlation, row-major.
    pub corr_chol: [f64; 36],
    /// One unit-normal 6-vector per test.
    pub z: Vec<[f64; 6]>,
    pub sigma: [f64; 3],
}

impl HierParams {
    /// Random effect of test `i`: `diag(sd_w) L z_i`.
    pub fn effect(&self, i: usize) -> [f64; 6] {
        effect(&self.sd_w, &self.corr_chol, &self.z[i])
    }

    pub fn test_beta(&self, i: usize) -> [f64; 6] {
        let w = self.effect(i);
        std::array::from_fn(|a| self.beta_hyper[a] + w[a])
    }

    /// Correlation matrix `L L'`, row-major.
    pub fn corr(&self) -> [f64; 36] {
        corr_from_chol(&self.corr_chol)
    }
}

fn effect(sd: &[f64; 6], l: &[f64; 36], z: &[f64; 6]) -> [f64; 6] {
    std::array::from_fn(|a| sd[a] * (0..=a).map(|b| l[a * K + b] * z[b]).sum::<f64>())
}

pub fn corr_from_chol(l: &[f64; 36]) -> [f64; 36] {
    let mut c = [0.0; 36];
    for i in 0..K {
        for j in 0..K {
            c[i * K + j] = (0..=i.min(j)).map(|m| l[i * K + m] * l[j * K + m]).sum();
        }
    }
    c
}

/// `ln` LKJ density of a correlation Cholesky factor, without the
/// normalising constant, and its gradient with respect to the diagonal.
fn lkj_chol(l: &[f64; 36], eta: f64, grad_diag: &mut [f64; K]) -> f64 {
    let mut lp = 0.0;
    for i in 1..K {
        let coef = (K - i - 1) as f64 + 2.0 * eta - 2.0;
        lp += coef * l[i * K + i].ln();
        grad_diag[i] = coef / l[i * K + i];
    }
    lp
}

/// Canonical partial correlations `tanh(y)` to a correlation Cholesky factor.
/// Returns the factor and the log-Jacobian, or `None` at the boundary.
pub fn cpc_to_chol(y: &[f64]) -> Option<([f64; 36], f64)> {
    let mut l = [0.0; 36];
    let mut log_j = 0.0;
    l[0] = 1.0;
    let mut k = 0;
    for i in 1..K {
        let z = y[k].tanh();
        log_j += (-z * z).ln_1p();
        k += 1;
        l[i * K] = z;
        let mut sum_sqs = z * z;
        for j in 1..i {
            let z = y[k].tanh();
            log_j += (-z * z).ln_1p();
            k += 1;
            log_j += 0.5 * (-sum_sqs).ln_1p();
            l[i * K + j] = z * (1.0 - sum_sqs).sqrt();
            sum_sqs += l[i * K + j] * l[i * K + j];
        }
        if !(sum_sqs < 1.0) {
            return None;
        }
        l[i * K + i] = (1.0 - sum_sqs).sqrt();
    }
    log_j.is_finite().then_some((l, log_j))
}

pub fn chol_to_cpc(l: &[f64; 36]) -> [f64; N_CPC] {
    let mut y = [0.0; N_CPC];
    let mut k = 0;
    for i in 1..K {
        let mut sum_sqs: f64 = 0.0;
        for j in 0..i {
            let z = l[i * K + j] / (1.0 - sum_sqs).sqrt();
            y[k] = z.atanh();
            k += 1;
            sum_sqs += l[i * K + j] * l[i * K + j];
        }
    }
    y
}

/// Reverse pass of `cpc_to_chol` including its log-Jacobian. `g_l` is the
/// gradient with respect to the factor entries; writes into `out`.
fn cpc_backprop(y: &[f64], l: &[f64; 36], g_l: &[f64; 36], out: &mut [f64]) {
    let mut k0 = 0;
    for i in 1..K {
        let ks: Vec<usize> = (k0..k0 + i).collect();
        k0 += i;
        let zs: Vec<f64> = ks.iter().map(|&k| y[k].tanh()).collect();
        // Running sums of squares before each column.
        let mut s = vec![0.0; i + 1];
        for j in 0..i {
            s[j + 1] = s[j] + l[i * K + j] * l[i * K + j];
        }
        let mut gz = vec![0.0; i];
        let mut gs = -g_l[i * K + i] / (2.0 * l[i * K + i]);
        for j in (1..i).rev() {
            let lij = l[i * K + j];
            let a = g_l[i * K + j] + 2.0 * lij * gs;
            let c = (1.0 - s[j]).sqrt();
            gz[j] = a * c;
            gs += -a * zs[j] / (2.0 * c) - 0.5 / (1.0 - s[j]);
        }
        gz[0] = g_l[i * K] + 2.0 * l[i * K] * gs;
        for j in 0..i {
            let z = zs[j];
            out[ks[j]] = gz[j] * (1.0 - z * z) - 2.0 * z;
        }
    }
}

/// Random-effect scale held fixed instead of sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedScale {
    pub sd_w: [f64; 6],
    pub corr_chol: [f64; 36],
}

/// Posterior of the two-level model.
#[derive(Debug, Clone)]
pub struct HierModel {
    data: Vec<PreparedSeries>,
    fixed: Option<FixedScale>,
}

struct Offsets {
    sd: usize,
    cpc: usize,
    sigma: usize,
    z: usize,
}

impl HierModel {
    pub fn new(tests: &[BreathSeries]) -> Result<Self, HierError> {
        if tests.is_empty() {
            return Err(HierError::TooFewTests { needed: 1, found: 0 });
        }
        Ok(Self {
            data: tests.iter().map(PreparedSeries::new).collect(),
            fixed: None,
        })
    }

    /// Holds `sd_w` and the correlation factor fixed; only the population
    /// values, noise scales and latent effects are sampled.
    pub fn with_fixed_scale(mut self, fixed: FixedScale) -> Self {
        self.fixed = Some(fixed);
        self
    }

    pub fn n_tests(&self) -> usize {
        self.data.len()
    }

    fn offsets(&self) -> Offsets {
        let (sd, cpc, sigma) = if self.fixed.is_some() { (6, 6, 6) } else { (6, 12, 27) };
        Offsets {
            sd,
            cpc,
            sigma,
            z: sigma + 3,
        }
    }

    /// Unconstrained coordinates to natural parameters, with the log-Jacobian.
    pub fn constrain(&self, u: &[f64]) -> Option<(HierParams, f64)> {
        let o = self.offsets();
        let beta_hyper = constrain_beta(&u[..6]);
        let mut log_j = 0.0;
        let (sd_w, corr_chol) = match &self.fixed {
            Some(f) => (f.sd_w, f.corr_chol),
            None => {
                let sd: [f64; 6] = std::array::from_fn(|a| u[o.sd + a].exp());
                log_j += u[o.sd..o.sd + 6].iter().sum::<f64>();
                let (l, lj) = cpc_to_chol(&u[o.cpc..o.cpc + N_CPC])?;
                log_j += lj;
                (sd, l)
            }
        };
        let sigma: [f64; 3] = std::array::from_fn(|a| u[o.sigma + a].exp());
        log_j += u[o.sigma..o.sigma + 3].iter().sum::<f64>();
        let z = u[o.z..].chunks_exact(6).map(|c| c.try_into().expect("6")).collect();
        Some((
            HierParams {
                beta_hyper,
                sd_w,
                corr_chol,
                z,
                sigma,
            },
            log_j,
        ))
    }

    pub fn unconstrain(&self, hp: &HierParams) -> Vec<f64> {
        let mut u = unconstrain_beta(&hp.beta_hyper).to_vec();
        if self.fixed.is_none() {
            u.extend(hp.sd_w.iter().map(|s| s.ln()));
            u.extend(chol_to_cpc(&hp.corr_chol));
        }
        u.extend(hp.sigma.iter().map(|s| s.ln()));
        u.extend(hp.z.iter().flatten());
        u
    }

    fn per_test(&self, hp: &HierParams) -> Vec<(f64, [f64; N_PARAMS])> {
        let eval = |(i, d): (usize, &PreparedSeries)| {
            let b = hp.test_beta(i);
            let mut th = [0.0; N_PARAMS];
            th[..6].copy_from_slice(&b);
            th[6..].copy_from_slice(&hp.sigma);
            let mut g = [0.0; N_PARAMS];
            if !CurveParams::in_domain(&b) {
                return (f64::NEG_INFINITY, g);
            }
            (log_likelihood_acc(d, &th, &mut g), g)
        };
        if self.data.len() >= PAR_MIN_TESTS {
            self.data.par_iter().enumerate().map(eval).collect()
        } else {
            self.data.iter().enumerate().map(eval).collect()
        }
    }

    /// Per-test log-likelihood at `beta_hyper + w_i`.
    pub fn per_test_log_likelihood(&self, hp: &HierParams) -> Vec<f64> {
        self.per_test(hp).into_iter().map(|t| t.0).collect()
    }

    /// Log posterior on the natural scale (non-centred form, no Jacobian),
    /// with the gradient pieces needed by the sampler.
    fn natural(&self, hp: &HierParams, grad: Option<&mut NaturalGrad>) -> f64 {
        let n = self.data.len();
        let per_test = self.per_test(hp);
        if per_test.iter().any(|t| !t.0.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let lik = pairwise_sum(&per_test.iter().map(|t| t.0).collect::<Vec<_>>());

        let mut g_beta = [0.0; 6];
        let mut lp = lik + log_beta_prior_acc(&PriorSpec::Diffuse, &hp.beta_hyper, &mut g_beta);
        let mut g_sigma = [0.0; 3];
        for a in 0..3 {
            lp += half_cauchy_lpdf(hp.sigma[a], SIGMA_PRIOR_SCALE);
            g_sigma[a] += half_cauchy_dlpdf(hp.sigma[a], SIGMA_PRIOR_SCALE);
        }
        let mut g_sd = [0.0; 6];
        let mut g_diag = [0.0; K];
        if self.fixed.is_none() {
            for a in 0..6 {
                lp += half_cauchy_lpdf(hp.sd_w[a], SIGMA_PRIOR_SCALE);
                g_sd[a] += half_cauchy_dlpdf(hp.sd_w[a], SIGMA_PRIOR_SCALE);
            }
            lp += lkj_chol(&hp.corr_chol, LKJ_ETA, &mut g_diag);
        }
        let zz: Vec<f64> = hp.z.iter().map(|z| z.iter().map(|v| v * v).sum()).collect();
        lp += -0.5 * pairwise_sum(&zz) - 0.5 * LN_2PI * (6 * n) as f64;

        let Some(out) = grad else {
            return lp;
        };
        let l = &hp.corr_chol;
        let mut g_l = [0.0; 36];
        for i in 0..K {
            g_l[i * K + i] = g_diag[i];
        }
        out.z.clear();
        for (i, (_, g)) in per_test.iter().enumerate() {
            let z = &hp.z[i];
            for a in 0..6 {
                g_beta[a] += g[a];
                let lz: f64 = (0..=a).map(|b| l[a * K + b] * z[b]).sum();
                g_sd[a] += g[a] * lz;
                for b in 0..=a {
                    g_l[a * K + b] += g[a] * hp.sd_w[a] * z[b];
                }
            }
            for a in 0..3 {
                g_sigma[a] += g[6 + a];
            }
            let gz: [f64; 6] = std::array::from_fn(|b| {
                (b..6).map(|a| l[a * K + b] * hp.sd_w[a] * g[a]).sum::<f64>() - z[b]
            });
            out.z.push(gz);
        }
        out.beta = g_beta;
        out.sd = g_sd;
        out.chol = g_l;
        out.sigma = g_sigma;
        lp
    }

    /// Log posterior on the natural scale in the non-centred form.
    pub fn log_posterior(&self, hp: &HierParams) -> f64 {
        self.natural(hp, None)
    }

    /// The same posterior written in the centred form: `w_i ~ MVN(0, Sigma_w)`
    /// with `Sigma_w = D L L' D`. Differs from the non-centred density by the
    /// Jacobian `n * sum(ln(sd_a L_aa))`.
    pub fn log_posterior_centred(&self, hp: &HierParams) -> f64 {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&hp.sd_w));
        let l = DMatrix::from_row_slice(K, K, &hp.corr_chol);
        let cov = &d * &l * l.transpose() * &d;
        let cov_rm: Vec<f64> = (0..K).flat_map(|r| (0..K).map(move |c| (r, c))).map(|(r, c)| cov[(r, c)]).collect();
        let Ok(mvn) = MvNormal::new(&[0.0; 6], &cov_rm) else {
            return f64::NEG_INFINITY;
        };
        let mut lp = 0.0;
        for (i, data) in self.data.iter().enumerate() {
            let w = hp.effect(i);
            let b: [f64; 6] = std::array::from_fn(|a| hp.beta_hyper[a] + w[a]);
            if !CurveParams::in_domain(&b) {
                return f64::NEG_INFINITY;
            }
            let mut th = [0.0; N_PARAMS];
            th[..6].copy_from_slice(&b);
            th[6..].copy_from_slice(&hp.sigma);
            lp += log_likelihood_acc(data, &th, &mut [0.0; N_PARAMS]);
            lp += mvn.lpdf(&w);
        }
        lp += log_beta_prior_acc(&PriorSpec::Diffuse, &hp.beta_hyper, &mut [0.0; 6]);
        lp += hp.sigma.iter().map(|s| half_cauchy_lpdf(*s, SIGMA_PRIOR_SCALE)).sum::<f64>();
        if self.fixed.is_none() {
            lp += hp.sd_w.iter().map(|s| half_cauchy_lpdf(*s, SIGMA_PRIOR_SCALE)).sum::<f64>();
            lp += lkj_chol(&hp.corr_chol, LKJ_ETA, &mut [0.0; K]);
        }
        lp
    }

    /// Starting point: the best of `INIT_CANDIDATES` prior-based candidates by
    /// posterior density. A single prior draw can land in a high-noise mode
    /// that one chain then never leaves.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut best = self.candidate(rng);
        let mut best_lp = self.log_density(&best);
        for _ in 1..INIT_CANDIDATES {
            let u = self.candidate(rng);
            let lp = self.log_density(&u);
            if lp > best_lp || best_lp.is_nan() {
                (best, best_lp) = (u, lp);
            }
        }
        best
    }

    /// Population values from the diffuse prior, effect scales near 10% of
    /// those values, a near-identity correlation and small latent effects.
    fn candidate<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let th = draw_from_prior(&PriorSpec::Diffuse, rng);
        let beta_hyper: [f64; 6] = th[..6].try_into().expect("6");
        let sd_w = match &self.fixed {
            Some(f) => f.sd_w,
            None => std::array::from_fn(|a| {
                let scale = if a == 0 { beta_hyper[0].min(1.0 - beta_hyper[0]) } else { beta_hyper[a] };
                0.1 * scale * rng.random_range(-1.0f64..1.0).exp()
            }),
        };
        let mut corr_chol = [0.0; 36];
        match &self.fixed {
            Some(f) => corr_chol = f.corr_chol,
            None => {
                let y: Vec<f64> = (0..N_CPC).map(|_| rng.random_range(-0.2..0.2)).collect();
                corr_chol = cpc_to_chol(&y).map(|c| c.0).unwrap_or(corr_chol);
            }
        }
        let z = (0..self.n_tests())
            .map(|_| std::array::from_fn(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let hp = HierParams {
            beta_hyper,
            sd_w,
            corr_chol,
            z,
            sigma: th[6..].try_into().expect("3"),
        };
        self.unconstrain(&hp)
    }
}

#[derive(Debug)]
struct NaturalGrad {
    beta: [f64; 6],
    sd: [f64; 6],
    chol: [f64; 36],
    sigma: [f64; 3],
    z: Vec<[f64; 6]>,
}

impl Default for NaturalGrad {
    fn default() -> Self {
        Self {
            beta: [0.0; 6],
            sd: [0.0; 6],
            chol: [0.0; 36],
            sigma: [0.0; 3],
            z: Vec::new(),
        }
    }
}

fn pairwise_sum(x: &[f64]) -> f64 {
    match x.len() {
        0 => 0.0,
        1 => x[0],
        n => pairwise_sum(&x[..n / 2]) + pairwise_sum(&x[n / 2..]),
    }
}

impl LogDensity for HierModel {
    fn dim(&self) -> usize {
        self.offsets().z + 6 * self.n_tests()
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let Some((hp, log_j)) = self.constrain(u) else {
            return f64::NEG_INFINITY;
        };
        let mut g = NaturalGrad::default();
        let lp = self.natural(&hp, Some(&mut g));
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let o = self.offsets();
        let log_j_beta = pull_back_beta(&u[..6], &hp.beta_hyper, &g.beta, &mut grad[..6]);
        if self.fixed.is_none() {
            for a in 0..6 {
                grad[o.sd + a] = g.sd[a] * hp.sd_w[a] + 1.0;
            }
            cpc_backprop(&u[o.cpc..o.cpc + N_CPC], &hp.corr_chol, &g.chol, &mut grad[o.cpc..o.cpc + N_CPC]);
        }
        for a in 0..3 {
            grad[o.sigma + a] = g.sigma[a] * hp.sigma[a] + 1.0;
        }
        for (i, gz) in g.z.iter().enumerate() {
            grad[o.z + 6 * i..o.z + 6 * i + 6].copy_from_slice(gz);
        }
        lp + log_j + log_j_beta
    }
}

/// Hierarchical log posterior (natural scale, non-centred, no Jacobian).
pub fn hier_log_posterior(tests: &[BreathSeries], hp: &HierParams) -> Result<f64, HierError> {
    let model = HierModel::new(tests)?;
    if hp.z.len() != tests.len() {
        return Err(HierError::LatentShape {
            expected: tests.len(),
            found: hp.z.len(),
        });
    }
    Ok(model.log_posterior(hp))
}

pub const BETA_NAMES: [&str; 6] = ["beta0", "beta1", "beta2", "beta3", "beta4", "beta5"];

/// Names of the 30 population-level quantities, in storage order.
pub fn hyper_names() -> Vec<String> {
    let mut names: Vec<String> = BETA_NAMES.iter().map(|n| n.to_string()).collect();
    names.extend(BETA_NAMES.iter().map(|n| format!("sd_w_{n}")));
    for i in 0..K {
        for j in (i + 1)..K {
            names.push(format!("corr_{i}_{j}"));
        }
    }
    names.extend(["sigma_c", "sigma_v", "sigma_r"].map(String::from));
    names
}

fn hyper_vector(hp: &HierParams) -> Vec<f64> {
    let mut v = hp.beta_hyper.to_vec();
    v.extend(hp.sd_w);
    let c = hp.corr();
    for i in 0..K {
        for j in (i + 1)..K {
            v.push(c[i * K + j]);
        }
    }
    v.extend(hp.sigma);
    v
}

/// Posterior draws of the hierarchical model.
#[derive(Debug, Clone)]
pub struct HierSamples {
    model: HierModel,
    pub unconstrained: Vec<Vec<Vec<f64>>>,
    /// `[chain][iteration]` values named by `hyper_names()`.
    pub hyper: Vec<Vec<Vec<f64>>>,
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub step_sizes: Vec<f64>,
    pub warnings: Vec<String>,
}

impl HierSamples {
    pub fn hyper_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.hyper.iter().map(|c| c.iter().map(|d| d[j]).collect()).collect()
    }

    pub fn summary(&self, probs: &[f64]) -> Vec<SummaryRow> {
        hyper_names()
            .into_iter()
            .enumerate()
            .map(|(j, n)| SummaryRow::from_chains(n, &self.hyper_chains(j), probs))
            .collect()
    }

    /// Per-chain draws of the random effect `w_i` of test `i`.
    pub fn effect_chains(&self, i: usize) -> Vec<Vec<[f64; 6]>> {
        self.unconstrained
            .iter()
            .map(|c| {
                c.iter()
                    .map(|u| self.model.constrain(u).expect("sampled point").0.effect(i))
                    .collect()
            })
            .collect()
    }

    /// True when any population-level R-hat exceeds `limit`.
    pub fn flagged(&self, limit: f64) -> bool {
        self.summary(&[0.5]).iter().any(|r| r.exceeds_rhat(limit))
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::max)
    }
}

pub fn fit_hierarchical(tests: &[BreathSeries], cfg: &SamplerConfig) -> Result<HierSamples, HierError> {
    if tests.len() < 2 {
        return Err(HierError::TooFewTests {
            needed: 2,
            found: tests.len(),
        });
    }
    fit_model(HierModel::new(tests)?, cfg)
}

pub fn fit_model(model: HierModel, cfg: &SamplerConfig) -> Result<HierSamples, HierError> {
    let chains = sampler::run(&model, cfg, |rng: &mut ChaCha8Rng| model.initial_point(rng))?;
    Ok(assemble(model, chains))
}

fn assemble(model: HierModel, chains: Vec<ChainOutput>) -> HierSamples {
    let hyper: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| {
            c.draws
                .iter()
                .map(|u| hyper_vector(&model.constrain(u).expect("sampled point").0))
                .collect()
        })
        .collect();
    let divergences = chains.iter().map(ChainOutput::divergences).sum();
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    let mut warnings = Vec::new();
    if divergences as f64 > inference::DIVERGENCE_WARN_RATE * total as f64 {
        warnings.push(format!("{divergences} of {total} post-warmup transitions diverged"));
    }
    let mut out = HierSamples {
        model,
        unconstrained: chains.iter().map(|c| c.draws.clone()).collect(),
        hyper,
        rhat: Vec::new(),
        ess: Vec::new(),
        divergences,
        step_sizes: chains.iter().map(|c| c.step_size).collect(),
        warnings,
    };
    let n = hyper_names().len();
    out.rhat = (0..n).map(|j| diagnostics::rhat(&out.hyper_chains(j))).collect();
    out.ess = (0..n).map(|j| diagnostics::ess(&out.hyper_chains(j))).collect();
    out
}

/// An informative prior with the pieces it was assembled from.
#[derive(Debug, Clone)]
pub struct ExtractedPrior {
    pub prior: PriorSpec,
    pub mu: [f64; 6],
    pub sd_w: [f64; 6],
    /// Correlation used in the assembly (after any projection), row-major.
    pub corr: [f64; 36],
    /// True when the element-wise median correlation was not positive
    /// definite and had to be projected.
    pub projected: bool,
}

/// Builds `diag(sd) R diag(sd)` and the corresponding prior.
pub fn assemble_prior(mu: &[f64; 6], sd_w: &[f64; 6], corr: &[f64; 36]) -> Result<PriorSpec, InferenceError> {
    let mut sigma = [0.0; 36];
    for i in 0..K {
        for j in 0..K {
            sigma[i * K + j] = sd_w[i] * corr[i * K + j] * sd_w[j];
        }
    }
    PriorSpec::informative(mu, &sigma)
}

/// Splits an informative prior into mean, standard deviations and correlation.
pub fn decompose_prior(prior: &PriorSpec) -> Option<([f64; 6], [f64; 6], [f64; 36])> {
    let PriorSpec::Informative(inf) = prior else {
        return None;
    };
    let s = inf.sigma();
    let sd: [f64; 6] = std::array::from_fn(|i| s[i * K + i].sqrt());
    let corr = std::array::from_fn(|e| s[e] / (sd[e / K] * sd[e % K]));
    Some((*inf.mu(), sd, corr))
}

pub fn extract_informative_prior(samples: &HierSamples) -> Result<ExtractedPrior, HierError> {
    let med = |j: usize| diagnostics::median(&samples.hyper_chains(j).concat());
    let mu: [f64; 6] = std::array::from_fn(med);
    let sd_w: [f64; 6] = std::array::from_fn(|a| med(6 + a));
    let mut corr = [0.0; 36];
    let mut j = 12;
    for a in 0..K {
        corr[a * K + a] = 1.0;
        for b in (a + 1)..K {
            corr[a * K + b] = med(j);
            corr[b * K + a] = corr[a * K + b];
            j += 1;
        }
    }
    let (corr, projected) = project_correlation(&corr);
    let prior = assemble_prior(&mu, &sd_w, &corr)?;
    Ok(ExtractedPrior {
        prior,
        mu,
        sd_w,
        corr,
        projected,
    })
}

/// Leaves a positive-definite correlation matrix untouched; otherwise clamps
/// its eigenvalues at `PD_FLOOR` and rescales to a unit diagonal.
pub fn project_correlation(corr: &[f64; 36]) -> ([f64; 36], bool) {
    if cholesky(K, corr).is_ok() {
        return (*corr, false);
    }
    let (fixed, _) = nearest_positive_definite(K, corr, PD_FLOOR);
    let d: Vec<f64> = (0..K).map(|i| fixed[i * K + i].sqrt()).collect();
    let out = std::array::from_fn(|e| {
        let (i, j) = (e / K, e % K);
        if i == j {
            1.0
        } else {
            fixed[e] / (d[i] * d[j])
        }
    });
    (out, true)
}

/// Keeps the lowest replicate of each participant (first seen on ties), then
/// sends `round(fraction * n)` of them, chosen by a seeded shuffle, to the
/// training set. Both sets keep the input order.
pub fn holdout_split<T: Clone>(
    items: &[T],
    key: impl Fn(&T) -> (u64, u64),
    fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), HierError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(HierError::Fraction(fraction));
    }
    let mut first: Vec<(u64, u64, usize)> = Vec::new();
    for (idx, item) in items.iter().enumerate() {
        let (p, r) = key(item);
        match first.iter_mut().find(|e| e.0 == p) {
            Some(e) if r < e.1 => *e = (p, r, idx),
            Some(_) => {}
            None => first.push((p, r, idx)),
        }
    }
    let mut kept: Vec<usize> = first.into_iter().map(|e| e.2).collect();
    kept.sort_unstable();
    let mut order = kept.clone();
    order.shuffle(&mut sampler::chain_rng(seed, 0));
    let n_train = (fraction * kept.len() as f64).round() as usize;
    let mut train_idx = order[..n_train].to_vec();
    train_idx.sort_unstable();
    let train = train_idx.iter().map(|&i| items[i].clone()).collect();
    let valid = kept
        .iter()
        .filter(|i| train_idx.binary_search(i).is_err())
        .map(|&i| items[i].clone())
        .collect();
    Ok((train, valid))
}

/// Screening for highly irregular tests: true when a standalone diffuse fit
/// has any parameter R-hat above 1.25.
pub fn screen_irregular(series: &BreathSeries, cfg: &SamplerConfig) -> Result<bool, HierError> {
    let fit = inference::sample_posterior(series, &PriorSpec::Diffuse, cfg)?;
    Ok(fit.flagged(RHAT_BATCH_LIMIT))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_cohort, CohortSpec};
    use rand::SeedableRng;

    fn cohort(n: usize) -> Vec<BreathSeries> {
        generate_cohort(&CohortSpec {
            n_tests: n,
            ..CohortSpec::default()
        })
        .unwrap()
        .into_iter()
        .map(|t| t.series)
        .collect()
    }

    fn random_point(model: &HierModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let hp = HierParams {
            beta_hyper: [0.68, 0.129, 0.53, 124.3, 0.137, 29.96],
            sd_w: [0.05, 0.01, 0.05, 5.0, 0.01, 2.0],
            corr_chol: cpc_to_chol(&(0..N_CPC).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap().0,
            z: (0..model.n_tests())
                .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
                .collect(),
            sigma: [0.1, 0.08, 0.08],
        };
        model.unconstrain(&hp)
    }

    struct LkjOnly;

    impl LogDensity for LkjOnly {
        fn dim(&self) -> usize {
            N_CPC
        }
        fn log_density_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
            let Some((l, log_j)) = cpc_to_chol(y) else {
                return f64::NEG_INFINITY;
            };
            let mut g_diag = [0.0; K];
            let lp = lkj_chol(&l, LKJ_ETA, &mut g_diag);
            let mut g_l = [0.0; 36];
            (0..K).for_each(|i| g_l[i * K + i] = g_diag[i]);
            cpc_backprop(y, &l, &g_l, grad);
            lp + log_j
        }
    }

    #[test]
    fn lkj_marginals_match_beta() {
        // Off-diagonal marginal: (r + 1) / 2 ~ Beta(eta - 1 + K/2, same), so Var r = 1/9.
        let cfg = SamplerConfig {
            n_samples: 2000,
            seed: 5,
            ..SamplerConfig::default()
        };
        let chains = sampler::run(&LkjOnly, &cfg, |rng: &mut ChaCha8Rng| {
            (0..N_CPC).map(|_| rng.random_range(-0.5..0.5)).collect()
        })
        .unwrap();
        let corr: Vec<[f64; 36]> = chains
            .iter()
            .flat_map(|c| &c.draws)
            .map(|y| corr_from_chol(&cpc_to_chol(y).unwrap().0))
            .collect();
        for (i, j) in [(0, 1), (2, 4), (4, 5)] {
            let r: Vec<f64> = corr.iter().map(|c| c[i * K + j]).collect();
            let m = diagnostics::mean(&r);
            let v = diagnostics::sd(&r).powi(2);
            assert!(m.abs() < 0.03, "mean r[{i}{j}] = {m}");
            assert!((v - 1.0 / 9.0).abs() < 0.012, "var r[{i}{j}] = {v}");
        }
    }

    #[test]
    fn cpc_round_trip_and_unit_rows() {
        let y: Vec<f64> = (0..N_CPC).map(|i| 0.3 * (i as f64 - 7.0) / 7.0).collect();
        let (l, _) = cpc_to_chol(&y).unwrap();
        for i in 0..K {
            let norm: f64 = (0..K).map(|j| l[i * K + j].powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-14);
        }
        for (a, b) in chol_to_cpc(&l).iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = HierModel::new(&cohort(3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let u = random_point(&model, &mut rng);
            let mut g = vec![0.0; model.dim()];
            let lp = model.log_density_grad(&u, &mut g);
            assert!(lp.is_finite());
            for j in 0..model.dim() {
                let h = 1e-6;
                let mut up = u.clone();
                let mut dn = u.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (model.log_density(&up) - model.log_density(&dn)) / (2.0 * h);
                let err = (fd - g[j]).abs() / fd.abs().max(1.0);
                assert!(err < 1e-4, "coordinate {j}: {fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn non_centred_matches_centred() {
        let tests = cohort(4);
        let model = HierModel::new(&tests).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let (hp, _) = model.constrain(&random_point(&model, &mut rng)).unwrap();
            let jac: f64 = (0..K).map(|a| (hp.sd_w[a] * hp.corr_chol[a * K + a]).ln()).sum();
            let centred = model.log_posterior_centred(&hp) + tests.len() as f64 * jac;
            let non_centred = model.log_posterior(&hp);
            assert!((centred - non_centred).abs() < 1e-10 * non_centred.abs().max(1.0), "{centred} {non_centred}");
        }
    }

    #[test]
    fn zero_effect_reduces_to_single_test_likelihood() {
        let tests = cohort(1);
        let model = HierModel::new(&tests).unwrap();
        let beta = [0.68, 0.129, 0.53, 124.3, 0.137, 29.96];
        let hp = HierParams {
            beta_hyper: beta,
            sd_w: [0.1; 6],
            corr_chol: cpc_to_chol(&[0.0; N_CPC]).unwrap().0,
            z: vec![[0.0; 6]],
            sigma: [0.1, 0.08, 0.08],
        };
        let p = crate::model::MbwParams::new(beta, hp.sigma).unwrap();
        assert_eq!(model.per_test_log_likelihood(&hp)[0], inference::log_likelihood(&tests[0], &p));
    }

    #[test]
    fn out_of_domain_test_parameters_reject() {
        let tests = cohort(2);
        let hp = HierParams {
            beta_hyper: [0.68, 0.129, 0.53, 124.3, 0.137, 29.96],
            sd_w: [1.0; 6],
            corr_chol: cpc_to_chol(&[0.0; N_CPC]).unwrap().0,
            z: vec![[0.0; 6], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
            sigma: [0.1, 0.08, 0.08],
        };
        assert_eq!(hier_log_posterior(&tests, &hp).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn identity_correlation_gives_diagonal_prior() {
        let mut eye = [0.0; 36];
        (0..K).for_each(|i| eye[i * K + i] = 1.0);
        let sd = [0.15, 0.023, 0.2, 18.27, 0.024, 6.38];
        let prior = assemble_prior(&[0.68, 0.129, 0.53, 124.3, 0.137, 29.96], &sd, &eye).unwrap();
        let PriorSpec::Informative(inf) = &prior else { unreachable!() };
        for i in 0..K {
            for j in 0..K {
                let expect = if i == j { sd[i] * sd[i] } else { 0.0 };
                assert_eq!(inf.sigma()[i * K + j], expect);
            }
        }
        let (mu, sd2, _) = decompose_prior(&prior).unwrap();
        assert_eq!(mu[3], 124.3);
        assert_eq!(sd2, sd);
    }

    #[test]
    fn projection_repairs_indefinite_correlation() {
        let mut c = [0.0; 36];
        (0..K).for_each(|i| c[i * K + i] = 1.0);
        for (i, j, r) in [(0, 1, 0.95), (1, 2, 0.95), (0, 2, -0.95)] {
            c[i * K + j] = r;
            c[j * K + i] = r;
        }
        let (fixed, projected) = project_correlation(&c);
        assert!(projected);
        assert!(cholesky(K, &fixed).is_ok());
        assert!((0..K).all(|i| fixed[i * K + i] == 1.0));
    }

    #[test]
    fn holdout_split_properties() {
        let items: Vec<(u64, u64)> = (0..414).map(|p| (p, 0)).collect();
        let (a, b) = holdout_split(&items, |x| *x, 0.5, 3).unwrap();
        assert_eq!((a.len(), b.len()), (207, 207));
        let (a2, _) = holdout_split(&items, |x| *x, 0.5, 3).unwrap();
        assert_eq!(a, a2);
        let mut all: Vec<_> = a.iter().chain(&b).copied().collect();
        all.sort();
        assert_eq!(all, items);

        let reps = vec![(1, 2), (1, 1), (2, 1), (2, 3)];
        let (a, b) = holdout_split(&reps, |x| *x, 1.0, 0).unwrap();
        assert_eq!(a, vec![(1, 1), (2, 1)]);
        assert!(b.is_empty());
    }
}
