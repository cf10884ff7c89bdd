//! Shortened tests: truncate each series at a gas threshold, refit, and
//! compare LCI and FRC against the same test's complete-data fit.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{self, RHAT_BATCH_LIMIT};
use crate::inference::{sample_posterior_with, FitOptions, PosteriorSamples, PriorSpec};
use crate::model::{first_sustained_at_or_below, BreathSeries};
use crate::sampler::SamplerConfig;

/// Thresholds used when none are given, most to least aggressive.
pub const DEFAULT_THRESHOLDS: [u32; 6] = [3, 4, 5, 10, 20, 30];

/// Prefix through the first breath at which gas has dropped to `threshold`
/// and stays there for the next two breaths. Unchanged when that never
/// happens.
pub fn truncate_at_threshold(series: &BreathSeries, threshold: f64) -> BreathSeries {
    match first_sustained_at_or_below(series.gas(), threshold) {
        Some(k) => series.prefix(k + 1),
        None => series.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("cannot parse threshold {0:?}; expected \"complete\", \"1/N\" or a number in (0, 1)")]
pub struct ThresholdParseError(String);

/// A truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    Complete,
    /// `1 / n`, kept exact for labels.
    Reciprocal(u32),
    Value(f64),
}

impl Threshold {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Threshold::Complete => None,
            Threshold::Reciprocal(n) => Some(1.0 / f64::from(n)),
            Threshold::Value(v) => Some(v),
        }
    }

    pub fn apply(&self, series: &BreathSeries) -> BreathSeries {
        match self.value() {
            Some(t) => truncate_at_threshold(series, t),
            None => series.clone(),
        }
    }

    pub fn defaults() -> Vec<Threshold> {
        let mut t: Vec<Threshold> = DEFAULT_THRESHOLDS.iter().map(|&n| Threshold::Reciprocal(n)).collect();
        t.push(Threshold::Complete);
        t
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::Complete => f.write_str("complete"),
            Threshold::Reciprocal(n) => write!(f, "1/{n}"),
            Threshold::Value(v) => write!(f, "{v}"),
        }
    }
}

impl FromStr for Threshold {
    type Err = ThresholdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let err = || ThresholdParseError(s.to_string());
        if s.eq_ignore_ascii_case("complete") {
            return Ok(Threshold::Complete);
        }
        if let Some(d) = s.strip_prefix("1/") {
            let n: u32 = d.trim().parse().map_err(|_| err())?;
            return if n > 1 { Ok(Threshold::Reciprocal(n)) } else { Err(err()) };
        }
        let v: f64 = s.parse().map_err(|_| err())?;
        if v > 0.0 && v < 1.0 {
            Ok(Threshold::Value(v))
        } else {
            Err(err())
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub thresholds: Vec<Threshold>,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub fit: FitOptions,
}

impl StudyConfig {
    pub fn new(prior: PriorSpec, sampler: SamplerConfig) -> Self {
        Self {
            thresholds: Threshold::defaults(),
            prior,
            sampler,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    /// Fewer than 3 breaths retained.
    Unfittable,
    /// The fit itself, or the complete-data reference, failed.
    Failed(String),
}

/// One test at one threshold. Relative measures are percentages of the
/// complete-data posterior median of the same test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test_id: String,
    pub threshold: Threshold,
    pub breaths_complete: usize,
    pub breaths_retained: usize,
    pub status: FitStatus,
    /// Any parameter R-hat above the batch limit.
    pub flagged: bool,
    pub lci_median: f64,
    pub frc_median: f64,
    pub lci_pe: f64,
    pub frc_pe: f64,
    pub lci_ci_width: f64,
    pub frc_ci_width: f64,
}

/// Median and central 95% range of one measure over tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Spread {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                median: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            };
        }
        let q = diagnostics::quantiles(values, &[0.5, 0.025, 0.975]);
        Self {
            median: q[0],
            lower: q[1],
            upper: q[2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub lci_pe: Spread,
    pub frc_pe: Spread,
    pub lci_abs_pe: Spread,
    pub lci_ci_width: Spread,
    pub frc_ci_width: Spread,
    pub breaths_retained: Spread,
    /// `1 - mean retained / mean complete` over all tests.
    pub breaths_saved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub threshold: Threshold,
    /// Sorted by test id.
    pub records: Vec<TestRecord>,
    /// Over fitted records only.
    pub aggregate: Aggregate,
    pub n_fitted: usize,
    pub n_flagged: usize,
    pub n_unfittable: usize,
    pub n_failed: usize,
}

impl TruncationReport {
    /// Share of fitted tests flagged as unconverged.
    pub fn flagged_proportion(&self) -> f64 {
        self.n_flagged as f64 / self.n_fitted as f64
    }
}

/// LCI and FRC posterior medians and 95% interval widths.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    lci: f64,
    frc: f64,
    lci_width: f64,
    frc_width: f64,
    flagged: bool,
}

fn summarise_fit(s: &PosteriorSamples) -> Outcome {
    use crate::inference::DERIVED_NAMES;
    let idx = |name: &str| DERIVED_NAMES.iter().position(|n| *n == name).expect("derived name");
    let q = |j: usize| diagnostics::quantiles(&s.derived_pooled(j), &[0.5, 0.025, 0.975]);
    let lci = q(idx("lci_asymptotic"));
    let frc = q(idx("frc_asymptotic"));
    Outcome {
        lci: lci[0],
        frc: frc[0],
        lci_width: lci[2] - lci[1],
        frc_width: frc[2] - frc[1],
        flagged: s.flagged(RHAT_BATCH_LIMIT),
    }
}

fn fit(series: &BreathSeries, cfg: &StudyConfig) -> Result<Outcome, String> {
    sample_posterior_with(series, &cfg.prior, &cfg.sampler, &cfg.fit)
        .map(|s| summarise_fit(&s))
        .map_err(|e| e.to_string())
}

fn test_records(id: &str, series: &BreathSeries, cfg: &StudyConfig) -> Vec<TestRecord> {
    let reference = fit(series, cfg);
    cfg.thresholds
        .iter()
        .map(|&threshold| {
            let short = threshold.apply(series);
            let mut rec = TestRecord {
                test_id: id.to_string(),
                threshold,
                breaths_complete: series.len(),
                breaths_retained: short.len(),
                status: FitStatus::Fitted,
                flagged: false,
                lci_median: f64::NAN,
                frc_median: f64::NAN,
                lci_pe: f64::NAN,
                frc_pe: f64::NAN,
                lci_ci_width: f64::NAN,
                frc_ci_width: f64::NAN,
            };
            let full = match &reference {
                Ok(r) => *r,
                Err(e) => {
                    rec.status = FitStatus::Failed(format!("complete-data fit failed: {e}"));
                    return rec;
                }
            };
            if !short.is_fittable() {
                rec.status = FitStatus::Unfittable;
                return rec;
            }
            let out = if short.len() == series.len() {
                Ok(full)
            } else {
                fit(&short, cfg)
            };
            match out {
                Ok(o) => {
                    let pct = |v: f64, base: f64| 100.0 * v / base;
                    rec.flagged = o.flagged;
                    rec.lci_median = o.lci;
                    rec.frc_median = o.frc;
                    rec.lci_pe = pct(o.lci - full.lci, full.lci);
                    rec.frc_pe = pct(o.frc - full.frc, full.frc);
                    rec.lci_ci_width = pct(o.lci_width, full.lci);
                    rec.frc_ci_width = pct(o.frc_width, full.frc);
                }
                Err(e) => rec.status = FitStatus::Failed(e),
            }
            rec
        })
        .collect()
}

/// Fits every test at every threshold of `cfg`. Tests are fitted
/// independently; reports list records in test-id order.
pub fn run_truncation_study(tests: &[(String, BreathSeries)], cfg: &StudyConfig) -> Vec<TruncationReport> {
    let mut order: Vec<usize> = (0..tests.len()).collect();
    order.sort_by(|&a, &b| tests[a].0.cmp(&tests[b].0));
    let per_test: Vec<Vec<TestRecord>> = order
        .par_iter()
        .map(|&i| test_records(&tests[i].0, &tests[i].1, cfg))
        .collect();
    (0..cfg.thresholds.len())
        .map(|t| build_report(cfg.thresholds[t], per_test.iter().map(|r| r[t].clone()).collect()))
        .collect()
}

fn build_report(threshold: Threshold, records: Vec<TestRecord>) -> TruncationReport {
    let fitted: Vec<&TestRecord> = records.iter().filter(|r| r.status == FitStatus::Fitted).collect();
    let col = |f: fn(&TestRecord) -> f64| -> Vec<f64> { fitted.iter().map(|r| f(r)).collect() };
    let total = |f: fn(&TestRecord) -> usize| records.iter().map(f).sum::<usize>() as f64;
    let aggregate = Aggregate {
        lci_pe: Spread::of(&col(|r| r.lci_pe)),
        frc_pe: Spread::of(&col(|r| r.frc_pe)),
        lci_abs_pe: Spread::of(&col(|r| r.lci_pe.abs())),
        lci_ci_width: Spread::of(&col(|r| r.lci_ci_width)),
        frc_ci_width: Spread::of(&col(|r| r.frc_ci_width)),
        breaths_retained: Spread::of(&col(|r| r.breaths_retained as f64)),
        breaths_saved: 1.0 - total(|r| r.breaths_retained) / total(|r| r.breaths_complete),
    };
    TruncationReport {
        threshold,
        n_fitted: fitted.len(),
        n_flagged: fitted.iter().filter(|r| r.flagged).count(),
        n_unfittable: records.iter().filter(|r| r.status == FitStatus::Unfittable).count(),
        n_failed: records.iter().filter(|r| matches!(r.status, FitStatus::Failed(_))).count(),
        records,
        aggregate,
    }
}
