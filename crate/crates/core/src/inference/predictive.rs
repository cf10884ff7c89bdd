//! Posterior-predictive simulation and residual partial autocorrelation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{PosteriorSamples, N_PARAMS};
use crate::model::{BreathSeries, CurveParams, MbwParams, SeriesError};
use crate::sampler::chain_rng;

/// How the two volume series are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Log-normal increments, prefix-summed. Always monotone.
    Derivative,
    /// Log-normal noise applied to the cumulative curves directly.
    Cumulative,
}

/// A simulated test. May violate monotonicity under `Variant::Cumulative`,
/// so it is kept apart from the validated `BreathSeries`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSeries {
    pub gas: Vec<f64>,
    pub cevgm: Vec<f64>,
    pub cevtg: Vec<f64>,
}

impl SimulatedSeries {
    /// Adjacent pairs (in either volume series) that fail to increase.
    pub fn violations(&self) -> usize {
        let count = |s: &[f64]| s.windows(2).filter(|w| w[1] <= w[0]).count();
        count(&self.cevgm) + count(&self.cevtg)
    }

    pub fn into_series(self) -> Result<BreathSeries, SeriesError> {
        BreathSeries::new(self.gas, self.cevgm, self.cevtg)
    }
}

/// Simulates `m` breaths from the observation model. Noise scales may be
/// zero, which returns the mean curves.
pub fn simulate_series<R: Rng + ?Sized>(
    c: &CurveParams,
    sigma: [f64; 3],
    m: usize,
    variant: Variant,
    rng: &mut R,
) -> SimulatedSeries {
    let [sc, sv, sr] = sigma;
    let mut noise = |s: f64| -> f64 { (s * rng.sample::<f64, _>(StandardNormal)).exp() };
    let gas = (0..m).map(|k| c.gas(k as f64) * noise(sc)).collect();
    let (cevgm, cevtg) = match variant {
        Variant::Derivative => {
            let mut v = Vec::with_capacity(m);
            let mut r = Vec::with_capacity(m);
            let (mut sv_acc, mut sr_acc) = (0.0, 0.0);
            for k in 0..m {
                if k > 0 {
                    sv_acc += (c.log_cevgm_increment()).exp() * noise(sv);
                }
                v.push(sv_acc);
            }
            for k in 0..m {
                if k > 0 {
                    sr_acc += c.log_cevtg_increment((k - 1) as f64).exp() * noise(sr);
                }
                r.push(sr_acc);
            }
            (v, r)
        }
        Variant::Cumulative => {
            let v = (0..m).map(|k| c.cevgm(k as f64) * noise(sv)).collect();
            let r = (0..m).map(|k| c.cevtg(k as f64) * noise(sr)).collect();
            (v, r)
        }
    };
    SimulatedSeries { gas, cevgm, cevtg }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDataset {
    pub chain: usize,
    pub iteration: usize,
    pub series: SimulatedSeries,
    pub violations: usize,
}

/// Simulates `n_datasets` series of the fitted length from evenly spaced
/// posterior draws. Dataset `i` uses its own stream of `seed`.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    n_datasets: usize,
    variant: Variant,
    seed: u64,
) -> Vec<PredictiveDataset> {
    let n_samples = samples.n_samples();
    let total = samples.n_draws();
    if total == 0 {
        return Vec::new();
    }
    (0..n_datasets)
        .map(|i| {
            let flat = i * total / n_datasets.max(1);
            let (chain, iteration) = (flat / n_samples, flat % n_samples);
            let th = samples.draws[chain][iteration];
            let c = CurveParams::new(th[..6].try_into().expect("6"))
                .expect("sampled draws lie in the domain");
            let sigma = th[6..N_PARAMS].try_into().expect("3");
            let mut rng = chain_rng(seed, i);
            let series = simulate_series(&c, sigma, samples.n_breaths, variant, &mut rng);
            PredictiveDataset {
                chain,
                iteration,
                violations: series.violations(),
                series,
            }
        })
        .collect()
}

/// Sample partial autocorrelations at lags `1..=max_lag` by Durbin-Levinson.
/// All NaN when the input has no variance.
pub fn pacf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let max_lag = max_lag.min(n.saturating_sub(1));
    let mean = x.iter().sum::<f64>() / n as f64;
    let acov = |t: usize| -> f64 {
        (0..n - t).map(|i| (x[i] - mean) * (x[i + t] - mean)).sum::<f64>() / n as f64
    };
    let c0 = acov(0);
    if !(c0 > 1e-300) || !c0.is_finite() {
        return vec![f64::NAN; max_lag];
    }
    let r: Vec<f64> = (0..=max_lag).map(|t| acov(t) / c0).collect();
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::new();
    for k in 1..=max_lag {
        let num = r[k] - (1..k).map(|j| phi[j - 1] * r[k - j]).sum::<f64>();
        let den = 1.0 - (1..k).map(|j| phi[j - 1] * r[j]).sum::<f64>();
        let kk = num / den;
        let mut next: Vec<f64> = (1..k).map(|j| phi[j - 1] - kk * phi[k - j - 1]).collect();
        next.push(kk);
        phi = next;
        out.push(kk);
    }
    out
}

/// Partial autocorrelations of residuals on each curve's modelling scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualPacf {
    pub gas: Vec<f64>,
    pub cevgm: Vec<f64>,
    pub cevtg: Vec<f64>,
}

pub fn residual_pacf(series: &BreathSeries, fitted: &MbwParams, max_lag: usize) -> ResidualPacf {
    let c = &fitted.curve;
    let gas: Vec<f64> = series
        .gas()
        .iter()
        .enumerate()
        .map(|(k, y)| y.ln() - c.gas(k as f64).ln())
        .collect();
    let cevgm: Vec<f64> = series
        .cevgm()
        .windows(2)
        .map(|w| (w[1] - w[0]).ln() - c.log_cevgm_increment())
        .collect();
    let cevtg: Vec<f64> = series
        .cevtg()
        .windows(2)
        .enumerate()
        .map(|(m, w)| (w[1] - w[0]).ln() - c.log_cevtg_increment(m as f64))
        .collect();
    ResidualPacf {
        gas: pacf(&gas, max_lag),
        cevgm: pacf(&cevgm, max_lag),
        cevtg: pacf(&cevtg, max_lag),
    }
}
