//! Single-test posterior: priors, likelihood, unconstrained transform, and
//! sampling with derived LCI/CEV/FRC draws.

pub mod predictive;

pub use predictive::{
    pacf, posterior_predictive, residual_pacf, simulate_series, PredictiveDataset, ResidualPacf,
    SimulatedSeries, Variant,
};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, SummaryRow, DEFAULT_PROBS};
use crate::dist::{
    beta22_dlpdf, beta22_lpdf, half_cauchy_dlpdf, half_cauchy_lpdf, half_normal_lpdf, MatrixError,
    MvNormal, LN_2PI,
};
use crate::model::{
    BreathSeries, CurveParams, EndTestSolver, MbwParams, ModelError, ModelOutcomes,
    DEFAULT_THRESHOLD,
};
use crate::sampler::{self, ChainOutput, LogDensity, SamplerConfig, SamplerError};

/// Number of model parameters: six curve parameters and three noise scales.
pub const N_PARAMS: usize = 9;

pub const PARAM_NAMES: [&str; N_PARAMS] = [
    "beta0", "beta1", "beta2", "beta3", "beta4", "beta5", "sigma_c", "sigma_v", "sigma_r",
];

pub const DERIVED_NAMES: [&str; 6] = [
    "theta",
    "cev",
    "frc_asymptotic",
    "frc_theta",
    "lci_asymptotic",
    "lci_theta",
];

/// Scale of the half-Cauchy prior on every noise standard deviation.
pub const SIGMA_PRIOR_SCALE: f64 = 2.5;

/// Fraction of divergent post-warmup transitions that triggers a warning.
pub const DIVERGENCE_WARN_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("invalid prior covariance: {0}")]
    Prior(#[from] MatrixError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("informative prior mean must have 6 entries and covariance 36, got {mu} and {sigma}")]
    PriorShape { mu: usize, sigma: usize },
}

/// An informative prior: multivariate normal over `beta0..beta5`.
#[derive(Debug, Clone)]
pub struct InformativePrior {
    mu: [f64; 6],
    sigma: [f64; 36],
    mvn: MvNormal,
}

impl InformativePrior {
    pub fn mu(&self) -> &[f64; 6] {
        &self.mu
    }

    /// Covariance in row-major order.
    pub fn sigma(&self) -> &[f64; 36] {
        &self.sigma
    }

    pub fn mvn(&self) -> &MvNormal {
        &self.mvn
    }
}

// The factorised MVN is a function of the mean and covariance.
impl PartialEq for InformativePrior {
    fn eq(&self, other: &Self) -> bool {
        self.mu == other.mu && self.sigma == other.sigma
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Beta(2, 2) on beta0; half-normal with scales 1, 1, 1000, 1, 100 on
    /// beta1..beta5; half-Cauchy(0, 2.5) on each sigma.
    Diffuse,
    /// MVN on beta; half-Cauchy(0, 2.5) on each sigma.
    Informative(InformativePrior),
}

impl PriorSpec {
    pub fn informative(mu: &[f64], sigma_row_major: &[f64]) -> Result<Self, InferenceError> {
        if mu.len() != 6 || sigma_row_major.len() != 36 {
            return Err(InferenceError::PriorShape {
                mu: mu.len(),
                sigma: sigma_row_major.len(),
            });
        }
        let mvn = MvNormal::new(mu, sigma_row_major)?;
        Ok(Self::Informative(InformativePrior {
            mu: mu.try_into().expect("length checked"),
            sigma: sigma_row_major.try_into().expect("length checked"),
            mvn,
        }))
    }

    pub fn is_informative(&self) -> bool {
        matches!(self, Self::Informative(_))
    }
}

/// Observations reduced to the quantities the likelihood needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSeries {
    log_gas: Vec<f64>,
    sum_log_gas: f64,
    log_dv: Vec<f64>,
    log_dr: Vec<f64>,
}

impl PreparedSeries {
    pub fn new(series: &BreathSeries) -> Self {
        let log_gas: Vec<f64> = series.gas().iter().map(|c| c.ln()).collect();
        let incr = |s: &[f64]| -> Vec<f64> { s.windows(2).map(|w| (w[1] - w[0]).ln()).collect() };
        Self {
            sum_log_gas: log_gas.iter().sum(),
            log_gas,
            log_dv: incr(series.cevgm()),
            log_dr: incr(series.cevtg()),
        }
    }

    /// Number of breaths.
    pub fn len(&self) -> usize {
        self.log_gas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_gas.is_empty()
    }
}

/// Natural-scale parameter vector `(beta0..beta5, sigma_c, sigma_v, sigma_r)`.
pub type Natural = [f64; N_PARAMS];

pub fn natural_in_domain(th: &Natural) -> bool {
    let beta: &[f64; 6] = th[..6].try_into().expect("slice of 6");
    CurveParams::in_domain(beta) && th[6..].iter().all(|s| s.is_finite() && *s > 0.0)
}

/// Log-likelihood of one test at natural parameters. The gradient with
/// respect to the natural parameters is added to `grad`. Returns `-inf`
/// when the mean curve underflows.
pub(crate) fn log_likelihood_acc(d: &PreparedSeries, th: &Natural, grad: &mut Natural) -> f64 {
    let [b0, b1, b2, b3, b4, b5, sc, sv, sr] = *th;

    let mut ss = 0.0;
    let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
    let inv_sc2 = 1.0 / (sc * sc);
    for (k, &y) in d.log_gas.iter().enumerate() {
        let kf = k as f64;
        let e1 = (-b1 * kf).exp();
        let e2 = (-b2 * kf).exp();
        let f = e2 + b0 * (e1 - e2);
        if !(f > 0.0) {
            return f64::NEG_INFINITY;
        }
        let r = y - f.ln();
        ss += r * r;
        let w = r * inv_sc2 / f;
        g0 += w * (e1 - e2);
        g1 -= w * b0 * kf * e1;
        g2 -= w * (1.0 - b0) * kf * e2;
    }
    let n = d.log_gas.len() as f64;
    let mut lp = -d.sum_log_gas - n * (0.5 * LN_2PI + sc.ln()) - 0.5 * ss * inv_sc2;
    grad[0] += g0;
    grad[1] += g1;
    grad[2] += g2;
    grad[6] += -n / sc + ss * inv_sc2 / sc;

    let mu = b5.ln();
    let (mut s1, mut ss) = (0.0, 0.0);
    for &x in &d.log_dv {
        let r = x - mu;
        s1 += r;
        ss += r * r;
    }
    let n = d.log_dv.len() as f64;
    let inv_sv2 = 1.0 / (sv * sv);
    lp += -n * (0.5 * LN_2PI + sv.ln()) - 0.5 * ss * inv_sv2;
    grad[5] += s1 * inv_sv2 / b5;
    grad[7] += -n / sv + ss * inv_sv2 / sv;

    let c = b3.ln() + (-(-b4).exp_m1()).ln();
    let dc_db4 = 1.0 / b4.exp_m1();
    let (mut s1, mut sk, mut ss) = (0.0, 0.0, 0.0);
    for (m, &x) in d.log_dr.iter().enumerate() {
        let kf = m as f64;
        let r = x - (c - b4 * kf);
        s1 += r;
        sk += r * kf;
        ss += r * r;
    }
    let n = d.log_dr.len() as f64;
    let inv_sr2 = 1.0 / (sr * sr);
    lp += -n * (0.5 * LN_2PI + sr.ln()) - 0.5 * ss * inv_sr2;
    grad[3] += s1 * inv_sr2 / b3;
    grad[4] += (s1 * dc_db4 - sk) * inv_sr2;
    grad[8] += -n / sr + ss * inv_sr2 / sr;
    lp
}

/// Log prior density over the 9 natural parameters, gradient added to `grad`.
pub(crate) fn log_prior_acc(prior: &PriorSpec, th: &Natural, grad: &mut Natural) -> f64 {
    let mut lp = log_beta_prior_acc(prior, th[..6].try_into().expect("6"), grad);
    for j in 6..9 {
        lp += half_cauchy_lpdf(th[j], SIGMA_PRIOR_SCALE);
        grad[j] += half_cauchy_dlpdf(th[j], SIGMA_PRIOR_SCALE);
    }
    lp
}

/// Prior on the six curve parameters only. Gradient goes to `grad[..6]`.
pub(crate) fn log_beta_prior_acc(prior: &PriorSpec, b: &[f64; 6], grad: &mut [f64]) -> f64 {
    match prior {
        PriorSpec::Diffuse => {
            grad[0] += beta22_dlpdf(b[0]);
            grad[1] -= b[1];
            grad[2] -= b[2];
            grad[3] -= b[3] / 1e6;
            grad[4] -= b[4];
            grad[5] -= b[5] / 1e4;
            // ln 2 renormalises the two half-normals onto the ordered region.
            beta22_lpdf(b[0])
                + half_normal_lpdf(b[1], 1.0)
                + half_normal_lpdf(b[2], 1.0)
                + std::f64::consts::LN_2
                + half_normal_lpdf(b[3], 1000.0)
                + half_normal_lpdf(b[4], 1.0)
                + half_normal_lpdf(b[5], 100.0)
        }
        PriorSpec::Informative(inf) => {
            let mut g = [0.0; 6];
            inf.mvn.grad(b, &mut g);
            grad[..6].iter_mut().zip(g).for_each(|(a, v)| *a += v);
            inf.mvn.lpdf(b)
        }
    }
}

/// Log prior on the natural scale and its natural-scale gradient.
pub fn log_prior_natural(prior: &PriorSpec, p: &MbwParams) -> (f64, Natural) {
    let th = to_natural(p);
    let mut g = [0.0; N_PARAMS];
    let lp = log_prior_acc(prior, &th, &mut g);
    (lp, g)
}

pub fn to_natural(p: &MbwParams) -> Natural {
    let mut th = [0.0; N_PARAMS];
    th[..6].copy_from_slice(p.beta());
    th[6..].copy_from_slice(p.sigma());
    th
}

/// Maps unconstrained coordinates to natural parameters.
///
/// `logit(beta0)`, `log(beta1)`, `log(beta2 - beta1)`, then logs of the rest.
pub fn constrain(u: &[f64]) -> Natural {
    let mut th = [0.0; N_PARAMS];
    th[..6].copy_from_slice(&constrain_beta(&u[..6]));
    for j in 6..N_PARAMS {
        th[j] = u[j].exp();
    }
    th
}

pub fn unconstrain(th: &Natural) -> [f64; N_PARAMS] {
    let mut u = [0.0; N_PARAMS];
    u[..6].copy_from_slice(&unconstrain_beta(th[..6].try_into().expect("6")));
    for j in 6..N_PARAMS {
        u[j] = th[j].ln();
    }
    u
}

pub(crate) fn constrain_beta(u: &[f64]) -> [f64; 6] {
    let mut b = [0.0; 6];
    b[0] = 1.0 / (1.0 + (-u[0]).exp());
    b[1] = u[1].exp();
    b[2] = b[1] + u[2].exp();
    for j in 3..6 {
        b[j] = u[j].exp();
    }
    b
}

pub(crate) fn unconstrain_beta(b: &[f64; 6]) -> [f64; 6] {
    let mut u = [0.0; 6];
    u[0] = (b[0] / (1.0 - b[0])).ln();
    u[1] = b[1].ln();
    u[2] = (b[2] - b[1]).ln();
    for j in 3..6 {
        u[j] = b[j].ln();
    }
    u
}

/// Pulls a natural-scale gradient of `beta` back to the unconstrained scale,
/// adding the log-Jacobian gradient. Returns the log-Jacobian.
pub(crate) fn pull_back_beta(u: &[f64], b: &[f64], g: &[f64], out: &mut [f64]) -> f64 {
    let b0 = b[0];
    out[0] = g[0] * b0 * (1.0 - b0) + (1.0 - 2.0 * b0);
    out[1] = (g[1] + g[2]) * b[1] + 1.0;
    out[2] = g[2] * (b[2] - b[1]) + 1.0;
    for j in 3..6 {
        out[j] = g[j] * b[j] + 1.0;
    }
    // log(b0 (1 - b0)) written via softplus for stability in the tails.
    -softplus(-u[0]) - softplus(u[0]) + u[1..6].iter().sum::<f64>()
}

/// Pulls a natural-scale gradient back to the unconstrained scale and adds
/// the log-Jacobian and its gradient. Returns the log-Jacobian.
pub(crate) fn pull_back(u: &[f64], th: &Natural, g: &Natural, out: &mut [f64]) -> f64 {
    let mut log_j = pull_back_beta(u, th, g, out);
    for j in 6..N_PARAMS {
        out[j] = g[j] * th[j] + 1.0;
        log_j += u[j];
    }
    log_j
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Log-likelihood of one test at `p`.
pub fn log_likelihood(series: &BreathSeries, p: &MbwParams) -> f64 {
    let mut g = [0.0; N_PARAMS];
    log_likelihood_acc(&PreparedSeries::new(series), &to_natural(p), &mut g)
}

/// Log posterior of one test on the natural scale (no Jacobian). Returns
/// `-inf` outside the parameter domain.
pub fn log_posterior(series: &BreathSeries, p: &MbwParams, prior: &PriorSpec) -> f64 {
    let th = to_natural(p);
    let mut g = [0.0; N_PARAMS];
    log_likelihood_acc(&PreparedSeries::new(series), &th, &mut g) + log_prior_acc(prior, &th, &mut g)
}

/// The sampler's target: log posterior on the unconstrained scale.
#[derive(Debug, Clone)]
pub struct Posterior {
    data: Option<PreparedSeries>,
    prior: PriorSpec,
}

impl Posterior {
    pub fn new(series: &BreathSeries, prior: PriorSpec) -> Self {
        Self {
            data: Some(PreparedSeries::new(series)),
            prior,
        }
    }

    /// Prior only, with the likelihood switched off.
    pub fn prior_only(prior: PriorSpec) -> Self {
        Self { data: None, prior }
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    /// Log density and natural-scale gradient at natural parameters.
    pub fn natural(&self, th: &Natural) -> (f64, Natural) {
        let mut g = [0.0; N_PARAMS];
        if !natural_in_domain(th) {
            return (f64::NEG_INFINITY, g);
        }
        let mut lp = log_prior_acc(&self.prior, th, &mut g);
        if let Some(d) = &self.data {
            lp += log_likelihood_acc(d, th, &mut g);
        }
        (lp, g)
    }
}

impl LogDensity for Posterior {
    fn dim(&self) -> usize {
        N_PARAMS
    }

    fn log_density_grad(&self, u: &[f64], grad: &mut [f64]) -> f64 {
        let th = constrain(u);
        let (lp, g) = self.natural(&th);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + pull_back(u, &th, &g, grad)
    }
}

/// Gradient of the unconstrained log posterior (with log-Jacobian) at `p`.
pub fn log_posterior_gradient(series: &BreathSeries, p: &MbwParams, prior: &PriorSpec) -> [f64; N_PARAMS] {
    let target = Posterior::new(series, prior.clone());
    let u = unconstrain(&to_natural(p));
    let mut g = [0.0; N_PARAMS];
    target.log_density_grad(&u, &mut g);
    g
}

/// Draws a natural-scale parameter vector from the prior, rejecting into the
/// domain. Gives up after 100 tries and returns NaNs.
pub fn draw_from_prior<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Natural {
    let half = |rng: &mut R, sd: f64| -> f64 { (rng.sample::<f64, _>(StandardNormal) * sd).abs() };
    let cauchy = Cauchy::new(0.0, SIGMA_PRIOR_SCALE).expect("positive scale");
    for _ in 0..100 {
        let mut th = [0.0; N_PARAMS];
        match prior {
            PriorSpec::Diffuse => {
                th[0] = Beta::new(2.0, 2.0).expect("valid shape").sample(rng);
                let (a, b) = (half(rng, 1.0), half(rng, 1.0));
                th[1] = a.min(b);
                th[2] = a.max(b);
                th[3] = half(rng, 1000.0);
                th[4] = half(rng, 1.0);
                th[5] = half(rng, 100.0);
            }
            PriorSpec::Informative(inf) => th[..6].copy_from_slice(&inf.mvn.sample(rng)),
        }
        for s in &mut th[6..] {
            *s = cauchy.sample(rng).abs();
        }
        if natural_in_domain(&th) {
            return th;
        }
    }
    [f64::NAN; N_PARAMS]
}

/// Starting point for a chain: a prior draw, jittered on the unconstrained
/// scale by up to 0.1 in each coordinate.
pub fn initial_point<R: Rng + ?Sized>(prior: &PriorSpec, rng: &mut R) -> Vec<f64> {
    let th = draw_from_prior(prior, rng);
    unconstrain(&th)
        .iter()
        .map(|u| u + rng.random_range(-0.1..0.1))
        .collect()
}

/// Per-draw model-based outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedDraw {
    pub theta: f64,
    pub cev: f64,
    pub frc_asymptotic: f64,
    pub frc_theta: f64,
    pub lci_asymptotic: f64,
    pub lci_theta: f64,
}

impl DerivedDraw {
    /// Outcomes for one draw. Without a crossing before `k_max` the end-test
    /// breath is infinite: CEV and LCI are infinite and both FRCs equal beta3.
    pub fn compute(p: &CurveParams, threshold: f64, solver: &EndTestSolver) -> Self {
        match solver.solve(p, threshold) {
            Ok(theta) => {
                let o = ModelOutcomes::from_theta(p, theta);
                Self {
                    theta,
                    cev: o.asymptotic.cev,
                    frc_asymptotic: o.asymptotic.frc,
                    frc_theta: o.at_theta.frc,
                    lci_asymptotic: o.asymptotic.lci,
                    lci_theta: o.at_theta.lci,
                }
            }
            Err(_) => Self {
                theta: f64::INFINITY,
                cev: f64::INFINITY,
                frc_asymptotic: p.beta3(),
                frc_theta: p.beta3(),
                lci_asymptotic: f64::INFINITY,
                lci_theta: f64::INFINITY,
            },
        }
    }

    pub fn as_array(&self) -> [f64; 6] {
        [
            self.theta,
            self.cev,
            self.frc_asymptotic,
            self.frc_theta,
            self.lci_asymptotic,
            self.lci_theta,
        ]
    }
}

/// Settings of a single-test fit beyond the sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub threshold: f64,
    pub solver: EndTestSolver,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            solver: EndTestSolver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSamples {
    /// `[chain][iteration][parameter]` on the unconstrained scale.
    pub unconstrained: Vec<Vec<Vec<f64>>>,
    /// `[chain][iteration]` natural-scale parameters.
    pub draws: Vec<Vec<Natural>>,
    /// `[chain][iteration]` derived outcomes.
    pub derived: Vec<Vec<DerivedDraw>>,
    pub rhat: [f64; N_PARAMS],
    pub ess: [f64; N_PARAMS],
    pub divergences: usize,
    /// Draws whose mean gas curve never reaches the threshold.
    pub no_crossing: usize,
    pub step_sizes: Vec<f64>,
    pub warnings: Vec<String>,
    pub threshold: f64,
    pub n_breaths: usize,
}

impl PosteriorSamples {
    pub fn n_chains(&self) -> usize {
        self.draws.len()
    }

    pub fn n_samples(&self) -> usize {
        self.draws.first().map_or(0, Vec::len)
    }

    pub fn n_draws(&self) -> usize {
        self.draws.iter().map(Vec::len).sum()
    }

    /// Per-chain traces of natural parameter `j`.
    pub fn param_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.draws
            .iter()
            .map(|c| c.iter().map(|d| d[j]).collect())
            .collect()
    }

    /// Per-chain traces of derived quantity `j` (see `DERIVED_NAMES`).
    pub fn derived_chains(&self, j: usize) -> Vec<Vec<f64>> {
        self.derived
            .iter()
            .map(|c| c.iter().map(|d| d.as_array()[j]).collect())
            .collect()
    }

    pub fn derived_pooled(&self, j: usize) -> Vec<f64> {
        self.derived_chains(j).into_iter().flatten().collect()
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }

    /// True when any parameter R-hat exceeds `limit`.
    pub fn flagged(&self, limit: f64) -> bool {
        (0..N_PARAMS).any(|j| {
            let r = self.rhat[j];
            if r.is_nan() {
                diagnostics::sd(&self.param_chains(j).concat()) > 0.0
            } else {
                r > limit
            }
        })
    }

    /// Parameters at their marginal posterior medians.
    pub fn median_params(&self) -> Result<MbwParams, ModelError> {
        let m: Vec<f64> = (0..N_PARAMS)
            .map(|j| diagnostics::median(&self.param_chains(j).concat()))
            .collect();
        MbwParams::new(m[..6].try_into().expect("6"), m[6..].try_into().expect("3"))
    }
}

/// Samples the posterior of one test.
pub fn sample_posterior(
    series: &BreathSeries,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
) -> Result<PosteriorSamples, InferenceError> {
    sample_posterior_with(series, prior, cfg, &FitOptions::default())
}

pub fn sample_posterior_with(
    series: &BreathSeries,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
    opts: &FitOptions,
) -> Result<PosteriorSamples, InferenceError> {
    let target = Posterior::new(series, prior.clone());
    let chains = sampler::run(&target, cfg, |rng: &mut ChaCha8Rng| initial_point(prior, rng))?;
    Ok(assemble(chains, opts, series.len()))
}

/// Samples the prior alone through the same machinery.
pub fn sample_prior(prior: &PriorSpec, cfg: &SamplerConfig) -> Result<PosteriorSamples, InferenceError> {
    let target = Posterior::prior_only(prior.clone());
    let chains = sampler::run(&target, cfg, |rng: &mut ChaCha8Rng| initial_point(prior, rng))?;
    Ok(assemble(chains, &FitOptions::default(), 0))
}

fn assemble(chains: Vec<ChainOutput>, opts: &FitOptions, n_breaths: usize) -> PosteriorSamples {
    let mut draws = Vec::with_capacity(chains.len());
    let mut derived = Vec::with_capacity(chains.len());
    let mut no_crossing = 0;
    for c in &chains {
        let nat: Vec<Natural> = c.draws.iter().map(|u| constrain(u)).collect();
        let der: Vec<DerivedDraw> = nat
            .iter()
            .map(|th| {
                let p = CurveParams::new(th[..6].try_into().expect("6"))
                    .expect("sampled draws lie in the domain");
                DerivedDraw::compute(&p, opts.threshold, &opts.solver)
            })
            .collect();
        no_crossing += der.iter().filter(|d| d.theta.is_infinite()).count();
        draws.push(nat);
        derived.push(der);
    }
    let divergences: usize = chains.iter().map(ChainOutput::divergences).sum();
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    let mut warnings = Vec::new();
    let rate = divergences as f64 / total as f64;
    if rate > DIVERGENCE_WARN_RATE {
        warnings.push(format!(
            "{divergences} of {total} post-warmup transitions diverged ({:.1}%)",
            100.0 * rate
        ));
    }
    if no_crossing > 0 {
        warnings.push(format!(
            "{no_crossing} draws never reach the end-test threshold within the search range"
        ));
    }
    let mut out = PosteriorSamples {
        unconstrained: chains.iter().map(|c| c.draws.clone()).collect(),
        draws,
        derived,
        rhat: [f64::NAN; N_PARAMS],
        ess: [f64::NAN; N_PARAMS],
        divergences,
        no_crossing,
        step_sizes: chains.iter().map(|c| c.step_size).collect(),
        warnings,
        threshold: opts.threshold,
        n_breaths,
    };
    for j in 0..N_PARAMS {
        let pc = out.param_chains(j);
        out.rhat[j] = diagnostics::rhat(&pc);
        out.ess[j] = diagnostics::ess(&pc);
    }
    out
}

/// Summary rows for every parameter followed by every derived quantity.
pub fn summarize(samples: &PosteriorSamples, probs: &[f64]) -> Vec<SummaryRow> {
    let probs = if probs.is_empty() { &DEFAULT_PROBS[..] } else { probs };
    let mut rows: Vec<SummaryRow> = PARAM_NAMES
        .iter()
        .enumerate()
        .map(|(j, name)| SummaryRow::from_chains(*name, &samples.param_chains(j), probs))
        .collect();
    rows.extend(
        DERIVED_NAMES
            .iter()
            .enumerate()
            .map(|(j, name)| SummaryRow::from_chains(*name, &samples.derived_chains(j), probs)),
    );
    rows
}
