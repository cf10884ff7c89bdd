//! Convergence diagnostics and posterior summaries over per-chain draws.

use serde::{Deserialize, Serialize};

/// Sufficient effective sample size, five times twice the chain count.
pub fn ess_threshold(n_chains: usize) -> f64 {
    5.0 * (2 * n_chains) as f64
}

/// R-hat above which a batch fit is flagged as unconverged.
pub const RHAT_BATCH_LIMIT: f64 = 1.25;

/// Stricter advisory limit for single interactive fits.
pub const RHAT_ADVISORY_LIMIT: f64 = 1.01;

/// Default quantile probabilities of a summary.
pub const DEFAULT_PROBS: [f64; 3] = [0.025, 0.5, 0.975];

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator). Zero for a single value.
pub fn sd(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() - 1) as f64).sqrt()
}

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let (a, b) = (sorted[lo], sorted[hi]);
    if a == b {
        return a;
    }
    a + (h - lo as f64) * (b - a)
}

pub fn quantiles(x: &[f64], probs: &[f64]) -> Vec<f64> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    probs.iter().map(|&p| quantile_sorted(&sorted, p)).collect()
}

pub fn median(x: &[f64]) -> f64 {
    quantiles(x, &[0.5])[0]
}

/// Split R-hat: each chain is halved and the potential scale reduction is
/// computed over the halves. NaN when within-chain variance vanishes or any
/// draw is non-finite.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    let half = n / 2;
    if half < 2 || chains.iter().flatten().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let mut pieces = Vec::with_capacity(2 * chains.len());
    for c in chains {
        pieces.push(&c[..half]);
        pieces.push(&c[n - half..n]);
    }
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let vars: Vec<f64> = pieces.iter().map(|p| sd(p).powi(2)).collect();
    let w = mean(&vars);
    let b_over_n = sd(&means).powi(2);
    let scale = means.iter().map(|m| m.abs()).fold(0.0, f64::max).max(1.0);
    if !(w > 1e-24 * scale * scale) {
        return f64::NAN;
    }
    let nf = half as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size from the multi-chain autocorrelation estimate,
/// truncated by Geyer's initial positive sequence and made monotone.
/// NaN for constant or non-finite input.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 || chains.iter().flatten().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    // Mean over chains of the biased lag-t autocovariance.
    let acov = |t: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, mu)| {
                (0..n - t).map(|i| (c[i] - mu) * (c[i + t] - mu)).sum::<f64>() / nf
            })
            .sum::<f64>()
            / m as f64
    };
    let mean_var = acov(0) * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sd(&means).powi(2);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }

    let mut rho = vec![0.0; n + 1];
    let mut t = 0;
    let mut even = 1.0;
    rho[0] = even;
    let mut odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = odd;
    while t + 5 < n && even + odd > 0.0 {
        t += 2;
        even = 1.0 - (mean_var - acov(t)) / var_plus;
        odd = 1.0 - (mean_var - acov(t + 1)) / var_plus;
        if even + odd >= 0.0 {
            rho[t] = even;
            rho[t + 1] = odd;
        }
    }
    let max_t = t;
    if even > 0.0 {
        rho[max_t] = even;
    }

    let mut t = 0;
    while t + 4 <= max_t {
        t += 2;
        if rho[t] + rho[t + 1] > rho[t - 2] + rho[t - 1] {
            rho[t] = (rho[t - 2] + rho[t - 1]) / 2.0;
            rho[t + 1] = rho[t];
        }
    }

    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho[..max_t].iter().sum::<f64>() + rho[max_t];
    let tau = tau.max(1.0 / total.log10());
    total / tau
}

/// Posterior summary of one scalar quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub probs: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub rhat: f64,
    pub ess: f64,
    pub mcse_mean: f64,
}

impl SummaryRow {
    pub fn from_chains(name: impl Into<String>, chains: &[Vec<f64>], probs: &[f64]) -> Self {
        let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
        let ess = ess(chains);
        let sd = sd(&pooled);
        Self {
            name: name.into(),
            mean: mean(&pooled),
            sd,
            median: median(&pooled),
            probs: probs.to_vec(),
            quantiles: quantiles(&pooled, probs),
            rhat: rhat(chains),
            ess,
            mcse_mean: if sd == 0.0 { 0.0 } else { sd / ess.sqrt() },
        }
    }

    pub fn quantile(&self, prob: f64) -> Option<f64> {
        self.probs
            .iter()
            .position(|p| *p == prob)
            .map(|i| self.quantiles[i])
    }

    /// True when R-hat exceeds `limit`. An undefined R-hat on a quantity that
    /// does vary is treated as a failure; on a constant one it is not.
    pub fn exceeds_rhat(&self, limit: f64) -> bool {
        if self.rhat.is_nan() {
            return self.sd > 0.0 && self.sd.is_finite();
        }
        self.rhat > limit
    }
}
