//! Chain-parallel MCMC driver with a NUTS default and a random-walk fallback.
//!
//! Every chain owns a ChaCha8 stream keyed by `(seed, chain index)`, so the
//! draws do not depend on how rayon schedules the chains.

mod adapt;
mod nuts;
mod rwm;

pub use adapt::{DualAveraging, Welford, WindowedAdapter};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use nuts::{Nuts, Point};

/// A log density on an unconstrained real space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Returns the log density and writes its gradient into `grad`.
    /// Points outside the support return `-inf`; the gradient is then unused.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, x: &[f64]) -> f64 {
        let mut grad = vec![0.0; self.dim()];
        self.log_density_grad(x, &mut grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Nuts,
    RandomWalk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub algorithm: Algorithm,
    pub max_init_attempts: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 4,
            n_warmup: 1000,
            n_samples: 1000,
            seed: 1,
            target_accept: 0.8,
            max_tree_depth: 10,
            algorithm: Algorithm::Nuts,
            max_init_attempts: 100,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |field: &'static str, value: String| Err(SamplerError::Config { field, value });
        if self.n_chains == 0 {
            return bad("n_chains", self.n_chains.to_string());
        }
        if self.n_samples == 0 {
            return bad("n_samples", self.n_samples.to_string());
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return bad("target_accept", self.target_accept.to_string());
        }
        if self.max_tree_depth == 0 {
            return bad("max_tree_depth", self.max_tree_depth.to_string());
        }
        if self.max_init_attempts == 0 {
            return bad("max_init_attempts", self.max_init_attempts.to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplerError {
    #[error("invalid sampler setting {field} = {value}")]
    Config { field: &'static str, value: String },
    #[error("chain {chain} found no finite starting point in {attempts} attempts")]
    Initialization { chain: usize, attempts: usize },
    #[error("initial point has dimension {found}, target has {expected}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionStats {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
    pub log_density: f64,
    pub step_size: f64,
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    /// `n_samples` rows of unconstrained draws.
    pub draws: Vec<Vec<f64>>,
    pub stats: Vec<TransitionStats>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
    pub warmup_divergences: usize,
}

impl ChainOutput {
    pub fn divergences(&self) -> usize {
        self.stats.iter().filter(|s| s.divergent).count()
    }
}

pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn finite_start<T: LogDensity + ?Sized>(target: &T, q: &[f64]) -> bool {
    let mut grad = vec![0.0; q.len()];
    let lp = target.log_density_grad(q, &mut grad);
    lp.is_finite() && grad.iter().all(|g| g.is_finite())
}

/// Runs `cfg.n_chains` chains in parallel. `init` proposes starting points
/// from the chain's own stream and is retried up to `max_init_attempts`.
pub fn run<T, F>(target: &T, cfg: &SamplerConfig, init: F) -> Result<Vec<ChainOutput>, SamplerError>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|chain| run_chain(target, cfg, chain, &init))
        .collect()
}

fn run_chain<T, F>(target: &T, cfg: &SamplerConfig, chain: usize, init: &F) -> Result<ChainOutput, SamplerError>
where
    T: LogDensity + ?Sized,
    F: Fn(&mut ChaCha8Rng) -> Vec<f64> + Sync,
{
    let mut rng = chain_rng(cfg.seed, chain);
    let dim = target.dim();
    let mut start = None;
    for _ in 0..cfg.max_init_attempts {
        let q = init(&mut rng);
        if q.len() != dim {
            return Err(SamplerError::Dimension {
                expected: dim,
                found: q.len(),
            });
        }
        if finite_start(target, &q) {
            start = Some(q);
            break;
        }
    }
    let q0 = start.ok_or(SamplerError::Initialization {
        chain,
        attempts: cfg.max_init_attempts,
    })?;
    Ok(match cfg.algorithm {
        Algorithm::Nuts => nuts_chain(target, cfg, q0, &mut rng),
        Algorithm::RandomWalk => rwm::run_chain(target, cfg, q0, &mut rng),
    })
}

fn nuts_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    q0: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> ChainOutput {
    let dim = q0.len();
    let mut sampler = Nuts {
        target,
        inv_metric: vec![1.0; dim],
        step_size: 1.0,
        max_depth: cfg.max_tree_depth,
    };
    let mut z = Point::new(target, q0);
    sampler.init_step_size(&z, rng);

    let mut step_adapt = DualAveraging::new(cfg.target_accept);
    step_adapt.set_mu((10.0 * sampler.step_size).ln());
    let mut metric_adapt = WindowedAdapter::new(dim, cfg.n_warmup);
    let mut warmup_divergences = 0;
    for _ in 0..cfg.n_warmup {
        let s = sampler.transition(&mut z, rng);
        warmup_divergences += s.divergent as usize;
        sampler.step_size = step_adapt.learn(s.accept_stat);
        if let Some(inv) = metric_adapt.learn(&z.q) {
            sampler.inv_metric = inv;
            sampler.init_step_size(&z, rng);
            step_adapt.set_mu((10.0 * sampler.step_size).ln());
            step_adapt.restart();
        }
    }
    if cfg.n_warmup > 0 {
        sampler.step_size = step_adapt.finalize();
    }

    let mut draws = Vec::with_capacity(cfg.n_samples);
    let mut stats = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        stats.push(sampler.transition(&mut z, rng));
        draws.push(z.q.clone());
    }
    ChainOutput {
        draws,
        stats,
        step_size: sampler.step_size,
        inv_metric: sampler.inv_metric,
        warmup_divergences,
    }
}
