//! Washout curves, end-test breath solvers and the standard and model-based
//! LCI/CEV/FRC definitions.
//!
//! Everything in here is deterministic and sampler-free. Parameters follow the
//! ordered convention `0 < beta1 < beta2`, with `beta0` weighting the slower
//! `exp(-beta1 * k)` component.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standard end-test threshold, 1/40 of the starting tracer gas quantity.
pub const DEFAULT_THRESHOLD: f64 = 1.0 / 40.0;

/// Upper breath index searched for a threshold crossing.
pub const DEFAULT_K_MAX: f64 = 200.0;

/// Line-search resolution used by the grid-compatible solver.
pub const DEFAULT_GRID_RESOLUTION: u32 = 100;

/// Absolute x-tolerance of the bisection solver.
pub const BISECTION_X_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("parameter {name} = {value} is outside its domain")]
    ParameterDomain { name: &'static str, value: f64 },
    #[error("breath index {0} must be finite and non-negative")]
    BreathIndex(f64),
    #[error("threshold {0} must lie strictly between 0 and 1")]
    Threshold(f64),
    #[error("gas curve does not fall to {threshold} within {k_max} breaths")]
    NoCrossing { threshold: f64, k_max: f64 },
    #[error("series is not strictly increasing at index {index}")]
    NotIncreasing { index: usize },
    #[error("gas proportion {0} at the end-test breath must be below 1")]
    DivisionDomain(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SeriesError {
    #[error("a breath series needs at least 3 breaths, got {len}")]
    TooShort { len: usize },
    #[error("series lengths differ: k={k}, gas={gas}, cevgm={cevgm}, cevtg={cevtg}")]
    LengthMismatch {
        k: usize,
        gas: usize,
        cevgm: usize,
        cevtg: usize,
    },
    #[error("breath indices must be 0,1,2,... but position {index} holds {found}")]
    NonContiguousK { index: usize, found: i64 },
    #[error("{series} is not finite at breath {breath}")]
    NonFinite { series: &'static str, breath: usize },
    #[error("gas must be positive, found {value} at breath {breath}")]
    NonPositiveGas { breath: usize, value: f64 },
    #[error("{series} must start at 0, found {value}")]
    NonZeroStart { series: &'static str, value: f64 },
    #[error("{series} is not strictly increasing at breath {breath}")]
    NotIncreasing { series: &'static str, breath: usize },
}

/// Per-breath washout observations for a single test.
///
/// `cevgm` and `cevtg` are cumulative volumes (mL) starting from zero at the
/// first washout breath; both must be strictly increasing afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreathSeries {
    gas: Vec<f64>,
    cevgm: Vec<f64>,
    cevtg: Vec<f64>,
}

impl BreathSeries {
    pub fn new(gas: Vec<f64>, cevgm: Vec<f64>, cevtg: Vec<f64>) -> Result<Self, SeriesError> {
        let k: Vec<i64> = (0..gas.len() as i64).collect();
        Self::from_parts(&k, gas, cevgm, cevtg)
    }

    /// Builds a series from explicit breath indices, which must be `0..M`.
    pub fn from_parts(
        k: &[i64],
        gas: Vec<f64>,
        cevgm: Vec<f64>,
        cevtg: Vec<f64>,
    ) -> Result<Self, SeriesError> {
        if k.len() != gas.len() || gas.len() != cevgm.len() || gas.len() != cevtg.len() {
            return Err(SeriesError::LengthMismatch {
                k: k.len(),
                gas: gas.len(),
                cevgm: cevgm.len(),
                cevtg: cevtg.len(),
            });
        }
        if let Some((index, &found)) = k.iter().enumerate().find(|(i, &v)| v != *i as i64) {
            return Err(SeriesError::NonContiguousK { index, found });
        }
        if gas.len() < 3 {
            return Err(SeriesError::TooShort { len: gas.len() });
        }
        for (breath, &value) in gas.iter().enumerate() {
            if !value.is_finite() {
                return Err(SeriesError::NonFinite { series: "gas", breath });
            }
            if value <= 0.0 {
                return Err(SeriesError::NonPositiveGas { breath, value });
            }
        }
        check_cumulative("cevgm", &cevgm)?;
        check_cumulative("cevtg", &cevtg)?;
        Ok(Self { gas, cevgm, cevtg })
    }

    /// Number of breaths `M`.
    pub fn len(&self) -> usize {
        self.gas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gas.is_empty()
    }

    pub fn k(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        0..self.gas.len()
    }

    pub fn gas(&self) -> &[f64] {
        &self.gas
    }

    pub fn cevgm(&self) -> &[f64] {
        &self.cevgm
    }

    pub fn cevtg(&self) -> &[f64] {
        &self.cevtg
    }

    /// First `len` breaths. The result may be shorter than the 3 breaths a
    /// fit needs; callers check [`BreathSeries::is_fittable`].
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            gas: self.gas[..len].to_vec(),
            cevgm: self.cevgm[..len].to_vec(),
            cevtg: self.cevtg[..len].to_vec(),
        }
    }

    pub fn is_fittable(&self) -> bool {
        self.len() >= 3
    }
}

fn check_cumulative(series: &'static str, values: &[f64]) -> Result<(), SeriesError> {
    if let Some(breath) = values.iter().position(|v| !v.is_finite()) {
        return Err(SeriesError::NonFinite { series, breath });
    }
    if values[0] != 0.0 {
        return Err(SeriesError::NonZeroStart {
            series,
            value: values[0],
        });
    }
    if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
        return Err(SeriesError::NotIncreasing {
            series,
            breath: i + 1,
        });
    }
    Ok(())
}

/// The six curve parameters `beta0..beta5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct CurveParams([f64; 6]);

impl CurveParams {
    pub fn new(beta: [f64; 6]) -> Result<Self, ModelError> {
        let names = ["beta0", "beta1", "beta2", "beta3", "beta4", "beta5"];
        for (name, &value) in names.iter().zip(beta.iter()) {
            if !value.is_finite() || value <= 0.0 {
                return Err(ModelError::ParameterDomain { name, value });
            }
        }
        if beta[0] >= 1.0 {
            return Err(ModelError::ParameterDomain {
                name: "beta0",
                value: beta[0],
            });
        }
        if beta[2] <= beta[1] {
            return Err(ModelError::ParameterDomain {
                name: "beta2",
                value: beta[2],
            });
        }
        Ok(Self(beta))
    }

    /// True when `beta` satisfies every domain constraint.
    pub fn in_domain(beta: &[f64; 6]) -> bool {
        beta.iter().all(|b| b.is_finite() && *b > 0.0) && beta[0] < 1.0 && beta[1] < beta[2]
    }

    pub fn as_array(&self) -> &[f64; 6] {
        &self.0
    }

    pub fn beta0(&self) -> f64 {
        self.0[0]
    }
    pub fn beta1(&self) -> f64 {
        self.0[1]
    }
    pub fn beta2(&self) -> f64 {
        self.0[2]
    }
    pub fn beta3(&self) -> f64 {
        self.0[3]
    }
    pub fn beta4(&self) -> f64 {
        self.0[4]
    }
    pub fn beta5(&self) -> f64 {
        self.0[5]
    }

    /// Two-phase exponential decay `f(k)`.
    ///
    /// Evaluated as `e2 + beta0 * (e1 - e2)`, which is exactly 1 at `k = 0`.
    #[inline]
    pub fn gas(&self, k: f64) -> f64 {
        let e1 = (-self.0[1] * k).exp();
        let e2 = (-self.0[2] * k).exp();
        e2 + self.0[0] * (e1 - e2)
    }

    /// Linear CEVGM geometric mean `g(k)`.
    #[inline]
    pub fn cevgm(&self, k: f64) -> f64 {
        self.0[5] * k
    }

    /// Saturating CEVTG geometric mean `h(k)`.
    #[inline]
    pub fn cevtg(&self, k: f64) -> f64 {
        -self.0[3] * (-self.0[4] * k).exp_m1()
    }

    /// Mean of the log CEVGM increment.
    #[inline]
    pub fn log_cevgm_increment(&self) -> f64 {
        self.0[5].ln()
    }

    /// Mean of the log CEVTG increment between breaths `k` and `k + 1`.
    #[inline]
    pub fn log_cevtg_increment(&self, k: f64) -> f64 {
        self.0[3].ln() + (-(-self.0[4]).exp_m1()).ln() - self.0[4] * k
    }
}

impl TryFrom<[f64; 6]> for CurveParams {
    type Error = ModelError;
    fn try_from(beta: [f64; 6]) -> Result<Self, Self::Error> {
        Self::new(beta)
    }
}

impl From<CurveParams> for [f64; 6] {
    fn from(p: CurveParams) -> Self {
        p.0
    }
}

/// Curve parameters plus the log-scale noise standard deviations
/// `(sigma_c, sigma_v, sigma_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbwParams {
    pub curve: CurveParams,
    sigma: [f64; 3],
}

impl MbwParams {
    pub fn new(beta: [f64; 6], sigma: [f64; 3]) -> Result<Self, ModelError> {
        let curve = CurveParams::new(beta)?;
        let names = ["sigma_c", "sigma_v", "sigma_r"];
        for (name, &value) in names.iter().zip(sigma.iter()) {
            if !value.is_finite() || value <= 0.0 {
                return Err(ModelError::ParameterDomain { name, value });
            }
        }
        Ok(Self { curve, sigma })
    }

    pub fn beta(&self) -> &[f64; 6] {
        self.curve.as_array()
    }

    pub fn sigma(&self) -> &[f64; 3] {
        &self.sigma
    }
}

fn check_k(k: f64) -> Result<f64, ModelError> {
    if k.is_finite() && k >= 0.0 {
        Ok(k)
    } else {
        Err(ModelError::BreathIndex(k))
    }
}

fn check_threshold(threshold: f64) -> Result<f64, ModelError> {
    if threshold > 0.0 && threshold < 1.0 {
        Ok(threshold)
    } else {
        Err(ModelError::Threshold(threshold))
    }
}

pub fn gas_curve(k: f64, p: &CurveParams) -> Result<f64, ModelError> {
    Ok(p.gas(check_k(k)?))
}

pub fn cevgm_curve(k: f64, p: &CurveParams) -> Result<f64, ModelError> {
    Ok(p.cevgm(check_k(k)?))
}

pub fn cevtg_curve(k: f64, p: &CurveParams) -> Result<f64, ModelError> {
    Ok(p.cevtg(check_k(k)?))
}

/// `ln(series[i+1] - series[i])` for every adjacent pair.
///
/// A non-increasing pair is reported by the index of its second element.
pub fn log_increments(series: &[f64]) -> Result<Vec<f64>, ModelError> {
    series
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let d = w[1] - w[0];
            if d > 0.0 {
                Ok(d.ln())
            } else {
                Err(ModelError::NotIncreasing { index: i + 1 })
            }
        })
        .collect()
}

/// First index `k` such that `values[k..k+3]` are all at or below `threshold`.
pub fn first_sustained_at_or_below(values: &[f64], threshold: f64) -> Option<usize> {
    values
        .windows(3)
        .position(|w| w.iter().all(|&v| v <= threshold))
}

/// The standard end-test breath: first of three consecutive breaths with
/// `gas <= threshold`. `None` means the test is incomplete.
pub fn end_test_breath_standard(series: &BreathSeries, threshold: f64) -> Option<usize> {
    first_sustained_at_or_below(series.gas(), threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SolverMode {
    /// Bisection to an absolute x-tolerance.
    Bisection { x_tol: f64 },
    /// Line search at step `1/nmax`, the scheme used by the reference Stan
    /// model. Returns the first grid point at or below the threshold.
    Grid { nmax: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndTestSolver {
    pub k_max: f64,
    pub mode: SolverMode,
}

impl Default for EndTestSolver {
    fn default() -> Self {
        Self {
            k_max: DEFAULT_K_MAX,
            mode: SolverMode::Bisection {
                x_tol: BISECTION_X_TOL,
            },
        }
    }
}

impl EndTestSolver {
    pub fn grid(nmax: u32) -> Self {
        Self {
            mode: SolverMode::Grid { nmax },
            ..Self::default()
        }
    }

    /// Real-valued breath `theta` where `f(theta) = threshold`.
    pub fn solve(&self, p: &CurveParams, threshold: f64) -> Result<f64, ModelError> {
        let threshold = check_threshold(threshold)?;
        let no_crossing = ModelError::NoCrossing {
            threshold,
            k_max: self.k_max,
        };
        if p.gas(self.k_max) > threshold {
            return Err(no_crossing);
        }
        match self.mode {
            SolverMode::Bisection { x_tol } => {
                // f(k) <= exp(-beta1 k), so the crossing lies below -ln(t)/beta1.
                let mut hi = (-threshold.ln() / p.beta1()).min(self.k_max);
                if p.gas(hi) > threshold {
                    hi = self.k_max;
                }
                let mut lo = 0.0;
                while hi - lo > x_tol {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if p.gas(mid) > threshold {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
            SolverMode::Grid { nmax } => {
                let passes = |t1: f64, t2: f64| p.gas(t1) > threshold && p.gas(t2) <= threshold;
                let step = 1.0 / nmax as f64;
                let m_max = self.k_max.floor() as u64;
                let nmax = nmax as u64;
                for m in 1..=m_max {
                    if passes((m - 1) as f64, m as f64) {
                        for i in ((m - 1) * nmax)..=(m * nmax) {
                            if passes(step * (i as f64 - 1.0), step * i as f64) {
                                return Ok(step * i as f64);
                            }
                        }
                    }
                }
                Err(no_crossing)
            }
        }
    }
}

/// `theta` by bisection on `[0, 200]` with x-tolerance `1e-10`.
pub fn end_test_breath_model(p: &CurveParams, threshold: f64) -> Result<f64, ModelError> {
    EndTestSolver::default().solve(p, threshold)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeMethod {
    Standard,
    ModelTheta,
    ModelAsymptoticFrc,
}

impl OutcomeMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            OutcomeMethod::Standard => "standard",
            OutcomeMethod::ModelTheta => "model_theta",
            OutcomeMethod::ModelAsymptoticFrc => "model_asymptotic_frc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbwOutcomes {
    pub theta: f64,
    pub cev: f64,
    pub frc: f64,
    pub lci: f64,
    pub method: OutcomeMethod,
}

/// LCI from observed data at the standard end-test breath.
///
/// Returns `Ok(None)` for an incomplete test.
pub fn outcomes_standard(
    series: &BreathSeries,
    threshold: f64,
) -> Result<Option<MbwOutcomes>, ModelError> {
    let threshold = check_threshold(threshold)?;
    let Some(k) = end_test_breath_standard(series, threshold) else {
        return Ok(None);
    };
    let c = series.gas()[k];
    if c >= 1.0 {
        return Err(ModelError::DivisionDomain(c));
    }
    let cev = series.cevgm()[k];
    let frc = series.cevtg()[k] / (1.0 - c);
    Ok(Some(MbwOutcomes {
        theta: k as f64,
        cev,
        frc,
        lci: cev / frc,
        method: OutcomeMethod::Standard,
    }))
}

/// Both model-based outcome variants for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOutcomes {
    /// FRC from `h(theta) / (1 - f(theta))`.
    pub at_theta: MbwOutcomes,
    /// FRC fixed at the asymptote `beta3`; the default downstream.
    pub asymptotic: MbwOutcomes,
}

impl ModelOutcomes {
    pub fn from_theta(p: &CurveParams, theta: f64) -> Self {
        let cev = p.cevgm(theta);
        let frc_theta = p.cevtg(theta) / (1.0 - p.gas(theta));
        let frc_asym = p.beta3();
        Self {
            at_theta: MbwOutcomes {
                theta,
                cev,
                frc: frc_theta,
                lci: cev / frc_theta,
                method: OutcomeMethod::ModelTheta,
            },
            asymptotic: MbwOutcomes {
                theta,
                cev,
                frc: frc_asym,
                lci: cev / frc_asym,
                method: OutcomeMethod::ModelAsymptoticFrc,
            },
        }
    }
}

pub fn outcomes_model(p: &CurveParams, threshold: f64) -> Result<ModelOutcomes, ModelError> {
    outcomes_model_with(p, threshold, &EndTestSolver::default())
}

pub fn outcomes_model_with(
    p: &CurveParams,
    threshold: f64,
    solver: &EndTestSolver,
) -> Result<ModelOutcomes, ModelError> {
    let theta = solver.solve(p, threshold)?;
    Ok(ModelOutcomes::from_theta(p, theta))
}
