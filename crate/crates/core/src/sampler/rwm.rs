//! Adaptive random-walk Metropolis. Gradient-free, so it serves as an
//! independent check on the Hamiltonian sampler.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ChainOutput, LogDensity, SamplerConfig, TransitionStats, WindowedAdapter};

pub(crate) fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    q0: Vec<f64>,
    rng: &mut ChaCha8Rng,
) -> ChainOutput {
    let dim = q0.len();
    let goal = if dim == 1 { 0.44 } else { 0.234 };
    let mut log_scale = (2.38 / (dim as f64).sqrt()).ln();
    let mut var = vec![1.0; dim];
    let mut metric_adapt = WindowedAdapter::new(dim, cfg.n_warmup);

    let mut q = q0;
    let mut lp = target.log_density(&q);
    let mut proposal = vec![0.0; dim];

    let mut step = |q: &mut Vec<f64>, lp: &mut f64, scale: f64, var: &[f64], rng: &mut ChaCha8Rng| {
        for ((p, x), v) in proposal.iter_mut().zip(q.iter()).zip(var) {
            let z: f64 = rng.sample(StandardNormal);
            *p = x + scale * v.sqrt() * z;
        }
        let lp_new = target.log_density(&proposal);
        let log_ratio = if lp_new.is_nan() { f64::NEG_INFINITY } else { lp_new - *lp };
        let accept = log_ratio.min(0.0).exp();
        if rng.random::<f64>() < accept {
            q.copy_from_slice(&proposal);
            *lp = lp_new;
        }
        accept
    };

    for i in 0..cfg.n_warmup {
        let accept = step(&mut q, &mut lp, log_scale.exp(), &var, rng);
        log_scale += (accept - goal) / ((i + 1) as f64).powf(0.6);
        if let Some(v) = metric_adapt.learn(&q) {
            var = v;
        }
    }

    let scale = log_scale.exp();
    let mut draws = Vec::with_capacity(cfg.n_samples);
    let mut stats = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let accept = step(&mut q, &mut lp, scale, &var, rng);
        stats.push(TransitionStats {
            accept_stat: accept,
            tree_depth: 0,
            n_leapfrog: 0,
            divergent: false,
            energy: -lp,
            log_density: lp,
            step_size: scale,
        });
        draws.push(q.clone());
    }
    ChainOutput {
        draws,
        stats,
        step_size: scale,
        inv_metric: var,
        warmup_divergences: 0,
    }
}
