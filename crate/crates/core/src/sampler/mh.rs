use std::collections::VecDeque;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::optim::observed_information;
use super::{stream_rng, AdaptWindow, Chain, MCMCConfig};
use crate::error::{Error, Result};
use crate::model::ParamLayout;
use crate::target::LogDensity;

/// Optimal random-walk scaling constant (squared and divided by dimension when used).
pub const HAARIO_SCALE: f64 = 2.38;

fn haario_factor(dim: usize) -> f64 {
    HAARIO_SCALE * HAARIO_SCALE / dim as f64
}

/// Running mean and scatter matrix (Welford), or a bounded window of states.
enum History {
    All {
        n: usize,
        mean: DVector<f64>,
        scatter: DMatrix<f64>,
    },
    Window {
        cap: usize,
        states: VecDeque<Vec<f64>>,
    },
}

impl History {
    fn new(window: AdaptWindow, dim: usize) -> Self {
        match window {
            AdaptWindow::AllHistory => History::All {
                n: 0,
                mean: DVector::zeros(dim),
                scatter: DMatrix::zeros(dim, dim),
            },
            AdaptWindow::Recent(cap) => History::Window {
                cap,
                states: VecDeque::with_capacity(cap),
            },
        }
    }

    fn push(&mut self, x: &[f64]) {
        match self {
            History::All { n, mean, scatter } => {
                *n += 1;
                let d = mean.len();
                let delta = DVector::from_iterator(d, x.iter().zip(mean.iter()).map(|(a, m)| a - m));
                *mean += &delta / *n as f64;
                let delta2 = DVector::from_iterator(d, x.iter().zip(mean.iter()).map(|(a, m)| a - m));
                // lower triangle only; mirrored in covariance()
                for j in 0..d {
                    for i in j..d {
                        scatter[(i, j)] += delta[i] * delta2[j];
                    }
                }
            }
            History::Window { cap, states } => {
                if states.len() == *cap {
                    states.pop_front();
                }
                states.push_back(x.to_vec());
            }
        }
    }

    fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            History::All { n, scatter, .. } => {
                if *n < 2 {
                    return None;
                }
                let d = scatter.nrows();
                Some(DMatrix::from_fn(d, d, |i, j| {
                    let (a, b) = if i >= j { (i, j) } else { (j, i) };
                    scatter[(a, b)] / (*n as f64 - 1.0)
                }))
            }
            History::Window { states, .. } => {
                let n = states.len();
                if n < 2 {
                    return None;
                }
                let d = states[0].len();
                let mut mean = DVector::zeros(d);
                for s in states {
                    mean += DVector::from_column_slice(s);
                }
                mean /= n as f64;
                let mut cov = DMatrix::zeros(d, d);
                for s in states {
                    let c = DVector::from_column_slice(s) - &mean;
                    cov.ger(1.0, &c, &c, 1.0);
                }
                Some(cov / (n as f64 - 1.0))
            }
        }
    }
}

fn proposal_factor(cov: &DMatrix<f64>, scale: f64) -> Option<DMatrix<f64>> {
    (cov * scale).cholesky().map(|c| c.l())
}

/// Adaptive random-walk Metropolis-Hastings started at `init` (normally the MAP point).
///
/// The initial proposal covariance is `(2.38²/d)` times the inverse observed
/// information at `init`.
pub fn run_adaptive_mh<T: LogDensity + ?Sized>(
    target: &T,
    config: &MCMCConfig,
    init: &[f64],
    layout: Option<ParamLayout>,
) -> Result<Chain> {
    run_adaptive_mh_with(target, config, init, layout, None, 0)
}

/// As [`run_adaptive_mh`], with an explicit initial proposal matrix and RNG stream.
pub fn run_adaptive_mh_with<T: LogDensity + ?Sized>(
    target: &T,
    config: &MCMCConfig,
    init: &[f64],
    layout: Option<ParamLayout>,
    initial_proposal: Option<DMatrix<f64>>,
    stream: u64,
) -> Result<Chain> {
    let dim = init.len();
    if dim == 0 {
        return Err(Error::validation("cannot sample a zero-dimensional target"));
    }
    if let Some(l) = layout {
        if l.dim() != dim {
            return Err(Error::validation("layout does not match initial point"));
        }
    }
    config.validate(dim)?;

    let mut lp = target.log_density(init);
    if !lp.is_finite() {
        return Err(Error::numeric("target", "log density is not finite at the initial point"));
    }

    let mut proposal = match initial_proposal {
        Some(m) => {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::validation("initial proposal has the wrong shape"));
            }
            m
        }
        None => observed_information(target, init, config.jitter)? * haario_factor(dim),
    };
    let mut factor = proposal_factor(&proposal, config.proposal_scale)
        .ok_or_else(|| Error::numeric("proposal", "initial proposal covariance is not SPD"))?;

    let mut chain = Chain::empty(dim, layout, config.clone());
    chain.map_point = init.to_vec();
    chain.stream = stream;

    let mut rng = stream_rng(config.seed, stream);
    let mut history = History::new(config.adapt_window, dim);
    let mut current = init.to_vec();
    let mut candidate = vec![0.0; dim];
    let mut z = DVector::<f64>::zeros(dim);
    let (mut proposed, mut accepted) = (0usize, 0usize);
    let mut reject_streak = 0usize;

    for t in 1..=config.iterations {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let step = &factor * &z;
        for k in 0..dim {
            candidate[k] = current[k] + step[k];
        }
        let lp_cand = target.log_density(&candidate);
        let log_u = rng.random::<f64>().ln();
        let accept = lp_cand.is_finite() && log_u <= lp_cand - lp;
        if accept {
            current.copy_from_slice(&candidate);
            lp = lp_cand;
            reject_streak = 0;
        } else {
            reject_streak += 1;
            if reject_streak == config.adapt_interval {
                let msg = format!(
                    "no proposal accepted in {} consecutive iterations (ending at {t})",
                    config.adapt_interval
                );
                warn!("{msg}");
                chain.warnings.push(msg);
            }
        }
        if t > config.burn_in {
            proposed += 1;
            accepted += accept as usize;
            if (t - config.burn_in).is_multiple_of(config.thin) {
                chain.push(&current);
            }
        }

        history.push(&current);
        if t >= config.adapt_start && (t - config.adapt_start).is_multiple_of(config.adapt_interval) {
            if let Some(emp) = history.covariance() {
                let mut next = emp * haario_factor(dim);
                for k in 0..dim {
                    next[(k, k)] += config.jitter;
                }
                match proposal_factor(&next, config.proposal_scale) {
                    Some(l) => {
                        proposal = next;
                        factor = l;
                    }
                    None => chain
                        .warnings
                        .push(format!("adapted proposal at iteration {t} was not SPD; kept previous")),
                }
            }
        }
    }

    chain.acceptance_rate = accepted as f64 / proposed as f64;
    chain.proposal_cov_final = proposal;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(iterations: usize, burn_in: usize, thin: usize) -> MCMCConfig {
        MCMCConfig {
            iterations,
            burn_in,
            thin,
            adapt_start: 200,
            adapt_interval: 100,
            ..MCMCConfig::desk_scale()
        }
    }

    #[test]
    fn chain_length_arithmetic() {
        let target = |x: &[f64]| -0.5 * x[0] * x[0];
        for (it, b, th) in [(1000, 100, 7), (1000, 0, 1), (1234, 234, 10)] {
            let c = run_adaptive_mh(&target, &small_config(it, b, th), &[0.0], None).unwrap();
            assert_eq!(c.len(), (it - b) / th);
        }
    }

    #[test]
    fn constant_target_accepts_everything() {
        let flat = |_: &[f64]| 0.0;
        let cfg = small_config(2_000, 0, 1);
        let c = run_adaptive_mh_with(&flat, &cfg, &[0.0, 0.0], None, Some(DMatrix::identity(2, 2)), 0)
            .unwrap();
        assert_eq!(c.acceptance_rate, 1.0);
        // increments before the first adaptation are N(0, I)
        let col = c.column(0);
        let inc: Vec<f64> = col.windows(2).take(150).map(|w| w[1] - w[0]).collect();
        let var = inc.iter().map(|v| v * v).sum::<f64>() / inc.len() as f64;
        assert!((var - 1.0).abs() < 0.3, "{var}");
    }

    #[test]
    fn identical_seed_identical_chain() {
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + 4.0 * x[1] * x[1]);
        let cfg = small_config(3_000, 500, 5);
        let a = run_adaptive_mh(&target, &cfg, &[0.1, 0.1], None).unwrap();
        let b = run_adaptive_mh(&target, &cfg, &[0.1, 0.1], None).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
        let other = run_adaptive_mh(&target, &MCMCConfig { seed: 7, ..cfg }, &[0.1, 0.1], None).unwrap();
        assert_ne!(a.draws, other.draws);
    }

    #[test]
    fn proposal_stays_spd_with_recent_window() {
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1] * 100.0);
        let cfg = MCMCConfig {
            adapt_window: AdaptWindow::Recent(150),
            ..small_config(3_000, 500, 5)
        };
        let c = run_adaptive_mh(&target, &cfg, &[0.0, 0.0], None).unwrap();
        assert!(c.proposal_cov_final.clone().cholesky().is_some());
    }

    #[test]
    fn stuck_chain_records_warning() {
        // Far-too-wide proposal on a narrow target
        let target = |x: &[f64]| -0.5 * x[0] * x[0] * 1e12;
        let cfg = small_config(1_000, 0, 1);
        let c = run_adaptive_mh_with(&target, &cfg, &[0.0], None, Some(DMatrix::from_element(1, 1, 1e6)), 0)
            .unwrap();
        assert!(!c.warnings.is_empty());
    }

    #[test]
    fn non_finite_init_is_rejected() {
        let target = |_: &[f64]| f64::NEG_INFINITY;
        assert!(run_adaptive_mh(&target, &small_config(1000, 0, 1), &[0.0], None).is_err());
    }
}
