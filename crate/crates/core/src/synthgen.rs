//! Synthetic washout cohorts drawn from population hyperparameters, plus a
//! simulator for replicated two-method outcome data.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{MatrixError, MvNormal};
use crate::inference::{simulate_series, Variant};
use crate::model::{
    first_sustained_at_or_below, BreathSeries, CurveParams, ModelOutcomes, SeriesError,
    DEFAULT_THRESHOLD,
};
use crate::sampler::chain_rng;

/// Population medians of `beta0..beta5` for healthy children.
pub const REFERENCE_MU: [f64; 6] = [0.68, 0.129, 0.53, 124.3, 0.137, 29.96];

/// Random-effect standard deviations of `beta0..beta5`.
pub const REFERENCE_SD: [f64; 6] = [0.15, 0.023, 0.2, 18.27, 0.024, 6.38];

/// Random-effect correlations (upper triangle, row-major, `beta0..beta5`).
/// Correlations with `beta5` are not reported and are taken as zero.
const REFERENCE_CORR_UPPER: [(usize, usize, f64); 10] = [
    (0, 1, 0.25),
    (0, 2, 0.83),
    (0, 3, 0.02),
    (0, 4, -0.15),
    (1, 2, 0.25),
    (1, 3, -0.11),
    (1, 4, 0.91),
    (2, 3, -0.08),
    (2, 4, -0.10),
    (3, 4, -0.14),
];

/// Default observation noise `(sigma_c, sigma_v, sigma_r)`.
pub const DEFAULT_NOISE: [f64; 3] = [0.10, 0.08, 0.08];

pub fn reference_corr() -> [f64; 36] {
    let mut c = [0.0; 36];
    for i in 0..6 {
        c[i * 6 + i] = 1.0;
    }
    for (i, j, r) in REFERENCE_CORR_UPPER {
        c[i * 6 + j] = r;
        c[j * 6 + i] = r;
    }
    c
}

/// Covariance `diag(sd) R diag(sd)`, row-major.
pub fn covariance_from(sd: &[f64; 6], corr: &[f64; 36]) -> [f64; 36] {
    let mut s = [0.0; 36];
    for i in 0..6 {
        for j in 0..6 {
            s[i * 6 + j] = sd[i] * corr[i * 6 + j] * sd[j];
        }
    }
    s
}

pub fn reference_sigma() -> [f64; 36] {
    covariance_from(&REFERENCE_SD, &reference_corr())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreathRule {
    /// Exactly this many breaths.
    Fixed(usize),
    /// Breathe until three consecutive breaths have gas at or below
    /// `stop_threshold`, then stop after the third.
    UntilBelow { stop_threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_tests: usize,
    pub hyper_mu: [f64; 6],
    /// Row-major 6x6 covariance.
    pub hyper_sigma: Vec<f64>,
    pub noise: [f64; 3],
    pub breaths: BreathRule,
    /// Hard cap on simulated breaths.
    pub k_max: usize,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_tests: 100,
            hyper_mu: REFERENCE_MU,
            hyper_sigma: reference_sigma().to_vec(),
            noise: DEFAULT_NOISE,
            breaths: BreathRule::UntilBelow {
                stop_threshold: DEFAULT_THRESHOLD,
            },
            k_max: 200,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("hyperparameter covariance: {0}")]
    Covariance(#[from] MatrixError),
    #[error("noise scales must be finite and non-negative, got {0:?}")]
    Noise([f64; 3]),
    #[error("breath rule yields fewer than 3 breaths")]
    Breaths,
    #[error("over 99% of parameter draws fell outside the domain ({rejected} of {attempts})")]
    HyperDomain { rejected: usize, attempts: usize },
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// One simulated test with its generating truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTest {
    pub test_id: usize,
    pub series: BreathSeries,
    pub beta: [f64; 6],
    pub noise: [f64; 3],
    /// Model-based outcomes at the standard 1/40 threshold.
    pub truth: ModelOutcomes,
}

impl SyntheticTest {
    pub fn curve(&self) -> CurveParams {
        CurveParams::new(self.beta).expect("generated inside the domain")
    }
}

const MAX_ATTEMPTS_PER_TEST: usize = 10_000;

/// Draws `beta` from the population, rejecting draws outside the domain or
/// whose mean curve never reaches 1/40 within `k_max` breaths. Returns the
/// draw and the number of rejections.
fn draw_beta<R: Rng + ?Sized>(
    mvn: &MvNormal,
    k_max: usize,
    rng: &mut R,
) -> (Option<CurveParams>, usize) {
    for rejected in 0..MAX_ATTEMPTS_PER_TEST {
        let b: [f64; 6] = mvn.sample(rng).try_into().expect("dimension 6");
        if let Ok(p) = CurveParams::new(b) {
            if p.gas(k_max as f64) <= DEFAULT_THRESHOLD {
                return (Some(p), rejected);
            }
        }
    }
    (None, MAX_ATTEMPTS_PER_TEST)
}

pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<SyntheticTest>, SynthError> {
    if spec.noise.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(SynthError::Noise(spec.noise));
    }
    if matches!(spec.breaths, BreathRule::Fixed(m) if m < 3) || spec.k_max < 3 {
        return Err(SynthError::Breaths);
    }
    let mvn = MvNormal::new(&spec.hyper_mu, &spec.hyper_sigma)?;
    let drawn: Vec<_> = (0..spec.n_tests)
        .into_par_iter()
        .map(|i| {
            let mut rng = chain_rng(spec.seed, i);
            let (p, rejected) = draw_beta(&mvn, spec.k_max, &mut rng);
            (p.map(|p| simulate_test(i, &p, spec, &mut rng)), rejected)
        })
        .collect();
    let rejected: usize = drawn.iter().map(|d| d.1).sum();
    let attempts = rejected + drawn.iter().filter(|d| d.0.is_some()).count();
    if drawn.iter().any(|d| d.0.is_none()) || rejected as f64 > 0.99 * attempts as f64 {
        return Err(SynthError::HyperDomain { rejected, attempts });
    }
    drawn.into_iter().map(|d| d.0.expect("checked above")).collect()
}

fn simulate_test(
    test_id: usize,
    p: &CurveParams,
    spec: &CohortSpec,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticTest, SynthError> {
    let m = match spec.breaths {
        BreathRule::Fixed(m) => m,
        BreathRule::UntilBelow { .. } => spec.k_max,
    };
    let mut sim = simulate_series(p, spec.noise, m, Variant::Derivative, rng);
    sim.gas[0] = 1.0;
    if let BreathRule::UntilBelow { stop_threshold } = spec.breaths {
        if let Some(k) = first_sustained_at_or_below(&sim.gas, stop_threshold) {
            let keep = k + 3;
            sim.gas.truncate(keep);
            sim.cevgm.truncate(keep);
            sim.cevtg.truncate(keep);
        }
    }
    let theta = crate::model::end_test_breath_model(p, DEFAULT_THRESHOLD)
        .expect("crossing guaranteed by the draw");
    Ok(SyntheticTest {
        test_id,
        series: sim.into_series()?,
        beta: *p.as_array(),
        noise: spec.noise,
        truth: ModelOutcomes::from_theta(p, theta),
    })
}

/// Generating values for a replicated two-method comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgreementSpec {
    pub n_participants: usize,
    pub n_replicates: usize,
    pub alpha: [f64; 2],
    /// Participant effect SD.
    pub gamma: f64,
    /// Participant-by-method interaction SD.
    pub tau: f64,
    /// Participant-by-replicate SD, shared by both methods.
    pub omega: f64,
    /// Residual SD per method.
    pub sigma: [f64; 2],
    pub seed: u64,
}

impl Default for AgreementSpec {
    /// Exchangeable-replicate values on the LCI scale.
    fn default() -> Self {
        Self {
            n_participants: 400,
            n_replicates: 3,
            alpha: [6.10, 6.08],
            gamma: 0.3,
            tau: 0.01,
            omega: 0.0,
            sigma: [0.35, 0.39],
            seed: 1,
        }
    }
}

/// One outcome row: method (0 or 1), participant, replicate, value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub method: usize,
    pub participant: usize,
    pub replicate: usize,
    pub value: f64,
}

/// Simulates `y = alpha_m + u_p + a_pr + c_mp + e_mpr`, rows ordered by
/// participant, replicate, method.
pub fn simulate_agreement(spec: &AgreementSpec) -> Vec<AgreementRow> {
    let mut rng = chain_rng(spec.seed, 0);
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let mut rows = Vec::with_capacity(2 * spec.n_participants * spec.n_replicates);
    for p in 0..spec.n_participants {
        let u = spec.gamma * z();
        let c = [spec.tau * z(), spec.tau * z()];
        for r in 0..spec.n_replicates {
            let a = spec.omega * z();
            for m in 0..2 {
                rows.push(AgreementRow {
                    method: m,
                    participant: p,
                    replicate: r,
                    value: spec.alpha[m] + u + a + c[m] + spec.sigma[m] * z(),
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::cholesky;
    use crate::model::outcomes_standard;

    #[test]
    fn reference_covariance_is_positive_definite() {
        assert!(cholesky(6, &reference_sigma()).is_ok());
    }

    #[test]
    fn zero_noise_series_equal_mean_curves() {
        let spec = CohortSpec {
            n_tests: 20,
            noise: [0.0; 3],
            ..CohortSpec::default()
        };
        for t in generate_cohort(&spec).unwrap() {
            let c = t.curve();
            for k in t.series.k() {
                let kf = k as f64;
                assert_eq!(t.series.gas()[k], c.gas(kf));
                assert!((t.series.cevgm()[k] - c.cevgm(kf)).abs() <= 1e-12 * c.cevgm(kf).max(1.0));
                assert!((t.series.cevtg()[k] - c.cevtg(kf)).abs() <= 1e-12 * c.cevtg(kf).max(1.0));
            }
        }
    }

    #[test]
    fn standard_lci_on_noiseless_cohort_differs_only_by_discretisation() {
        let spec = CohortSpec {
            n_tests: 200,
            noise: [0.0; 3],
            ..CohortSpec::default()
        };
        for t in generate_cohort(&spec).unwrap() {
            let c = t.curve();
            let s = outcomes_standard(&t.series, DEFAULT_THRESHOLD).unwrap().unwrap();
            let theta = t.truth.asymptotic.theta;
            // The standard end-test breath is theta rounded up.
            assert_eq!(s.theta, theta.ceil());
            let k = s.theta;
            let expect = t.truth.asymptotic.lci * (k / theta) * c.beta3() * (1.0 - c.gas(k)) / c.cevtg(k);
            assert!((s.lci / expect - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gas_starts_at_one_and_stop_rule_applies() {
        let cohort = generate_cohort(&CohortSpec {
            n_tests: 50,
            ..CohortSpec::default()
        })
        .unwrap();
        for t in &cohort {
            let g = t.series.gas();
            assert_eq!(g[0], 1.0);
            let k = first_sustained_at_or_below(g, DEFAULT_THRESHOLD).unwrap();
            assert_eq!(g.len(), k + 3);
        }
    }

    #[test]
    fn same_seed_same_cohort() {
        let spec = CohortSpec {
            n_tests: 10,
            ..CohortSpec::default()
        };
        assert_eq!(generate_cohort(&spec).unwrap(), generate_cohort(&spec).unwrap());
    }

    #[test]
    fn impossible_hyperparameters_are_reported() {
        let mut mu = REFERENCE_MU;
        mu[0] = 5.0;
        let spec = CohortSpec {
            n_tests: 2,
            hyper_mu: mu,
            hyper_sigma: covariance_from(&[0.01; 6], &reference_corr()).to_vec(),
            ..CohortSpec::default()
        };
        assert!(matches!(generate_cohort(&spec), Err(SynthError::HyperDomain { .. })));
    }
}
