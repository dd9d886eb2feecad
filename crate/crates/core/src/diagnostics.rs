//! Model comparison (DIC, CPO, LPML), KL case-deletion influence and
//! convergence diagnostics (potential scale reduction, ESS, ACF).
//!
//! Per-subject quantities are built from the `s₀ × n` matrix of log-likelihood
//! terms and combined with log-sum-exp.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::shifted_mean;
use crate::model::{log_likelihood, log_likelihood_terms, Dataset, ParamVector};
use crate::sampler::Chain;

/// Subjects with KL divergence above this are flagged influential.
pub const KL_THRESHOLD: f64 = 0.223;
const KL_CLAMP: f64 = 1e-10;

pub fn deviance(theta: &ParamVector, data: &Dataset) -> Result<f64> {
    Ok(-2.0 * log_likelihood(theta, data)?)
}

fn check_chain(chain: &Chain, data: &Dataset) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::validation("chain has no draws"));
    }
    let layout = chain.layout_or_err()?;
    if layout != data.layout() {
        return Err(Error::validation(format!(
            "chain layout {:?} does not match dataset layout {:?}",
            layout,
            data.layout()
        )));
    }
    Ok(())
}

/// `ℓ[s][i]`: log-likelihood term of subject `i` under draw `s`.
pub fn log_likelihood_matrix(chain: &Chain, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    check_chain(chain, data)?;
    (0..chain.len())
        .into_par_iter()
        .map(|s| log_likelihood_terms(&chain.param(s)?, data))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dic: f64,
    pub p_d: f64,
    pub dev_bar: f64,
    pub dev_at_mean: f64,
}

/// Working-scale posterior mean (means of the starred draws).
pub fn working_mean(chain: &Chain) -> Result<ParamVector> {
    let layout = chain.layout_or_err()?;
    let flat: Vec<f64> = (0..chain.dim())
        .map(|j| shifted_mean(chain.rows().map(|r| r[j])))
        .collect();
    ParamVector::from_flat(layout, &flat)
}

pub fn dic_from_terms(terms: &[Vec<f64>], dev_at_mean: f64) -> DicReport {
    let dev_bar = shifted_mean(terms.iter().map(|row| -2.0 * row.iter().sum::<f64>()));
    let p_d = dev_bar - dev_at_mean;
    if p_d < 0.0 {
        warn!("negative effective number of parameters p_D = {p_d}");
    }
    DicReport {
        dic: dev_at_mean + 2.0 * p_d,
        p_d,
        dev_bar,
        dev_at_mean,
    }
}

pub fn dic(chain: &Chain, data: &Dataset) -> Result<DicReport> {
    let terms = log_likelihood_matrix(chain, data)?;
    let dev_at_mean = deviance(&working_mean(chain)?, data)?;
    Ok(dic_from_terms(&terms, dev_at_mean))
}

/// Per-subject conditional predictive ordinates, kept on the log scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpo {
    pub log_cpo: Vec<f64>,
}

impl Cpo {
    pub fn values(&self) -> Vec<f64> {
        self.log_cpo.iter().map(|v| v.exp()).collect()
    }
}

/// `log CPO_i = −log[(1/s₀) Σ_s exp(−ℓ_si)]`.
pub fn cpo_from_terms(terms: &[Vec<f64>]) -> Result<Cpo> {
    let s0 = terms.len();
    if s0 == 0 {
        return Err(Error::validation("no draws"));
    }
    let n = terms[0].len();
    let log_cpo = (0..n)
        .map(|i| {
            let min = terms.iter().map(|r| r[i]).fold(f64::INFINITY, f64::min);
            if !min.is_finite() {
                return Err(Error::numeric(
                    format!("subject {i}"),
                    "likelihood term is not finite for some draw",
                ));
            }
            let sum: f64 = terms.iter().map(|r| (min - r[i]).exp()).sum();
            // −(−min + ln(sum/s₀)) with the ratio taken first for exactness
            Ok(min - (sum / s0 as f64).ln())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Cpo { log_cpo })
}

pub fn cpo(chain: &Chain, data: &Dataset) -> Result<Cpo> {
    cpo_from_terms(&log_likelihood_matrix(chain, data)?)
}

/// `Σ log CPO_i`.
pub fn lpml(cpo_values: &[f64]) -> Result<f64> {
    if let Some(bad) = cpo_values.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::domain(format!("CPO values must be positive, got {bad}")));
    }
    Ok(cpo_values.iter().map(|v| v.ln()).sum())
}

/// `Σ log CPO_i` straight from log-scale ordinates.
pub fn lpml_from_log(cpo: &Cpo) -> f64 {
    cpo.log_cpo.iter().sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlInfluence {
    pub kl: Vec<f64>,
    pub influential: Vec<bool>,
}

/// `D_KL,i ≈ −log CPO_i + (1/s₀) Σ_s ℓ_si`.
pub fn kl_from_terms(terms: &[Vec<f64>], cpo: &Cpo) -> Result<KlInfluence> {
    let n = cpo.log_cpo.len();
    if terms.is_empty() || terms[0].len() != n {
        return Err(Error::validation("CPO values do not match the likelihood terms"));
    }
    let kl: Vec<f64> = (0..n)
        .map(|i| {
            let v = -cpo.log_cpo[i] + shifted_mean(terms.iter().map(|r| r[i]));
            if v < 0.0 && v > -KL_CLAMP {
                0.0
            } else {
                v
            }
        })
        .collect();
    let influential = kl.iter().map(|&v| v > KL_THRESHOLD).collect();
    Ok(KlInfluence { kl, influential })
}

pub fn kl_influence(chain: &Chain, data: &Dataset, cpo: &Cpo) -> Result<KlInfluence> {
    kl_from_terms(&log_likelihood_matrix(chain, data)?, cpo)
}

/// DIC, CPO, LPML and KL influence for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub cpo: Vec<f64>,
    pub log_cpo: Vec<f64>,
    pub lpml: f64,
    pub kl: Vec<f64>,
    pub influential_flags: Vec<bool>,
    pub dic: f64,
    pub p_d: f64,
    pub dev_bar: f64,
    pub dev_at_mean: f64,
}

impl InfluenceReport {
    pub fn n_influential(&self) -> usize {
        self.influential_flags.iter().filter(|f| **f).count()
    }
}

pub fn influence_report(chain: &Chain, data: &Dataset) -> Result<InfluenceReport> {
    let terms = log_likelihood_matrix(chain, data)?;
    let dev_at_mean = deviance(&working_mean(chain)?, data)?;
    let d = dic_from_terms(&terms, dev_at_mean);
    let c = cpo_from_terms(&terms)?;
    let kl = kl_from_terms(&terms, &c)?;
    Ok(InfluenceReport {
        cpo: c.values(),
        lpml: lpml_from_log(&c),
        log_cpo: c.log_cpo,
        kl: kl.kl,
        influential_flags: kl.influential,
        dic: d.dic,
        p_d: d.p_d,
        dev_bar: d.dev_bar,
        dev_at_mean: d.dev_at_mean,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Potential scale reduction factor for one parameter across chains of equal length.
pub fn psrf(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::validation("need at least two chains"));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::validation("chains must have equal lengths"));
    }
    if n < 2 {
        return Err(Error::validation("chains need at least two draws"));
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let b = n as f64 * mean_var(&means).1;
    let nf = n as f64;
    let v_hat = (nf - 1.0) / nf * w + b / nf;
    Ok((v_hat / w).sqrt())
}

/// PSRF for every parameter column.
pub fn gelman_rubin(chains: &[Chain]) -> Result<Vec<f64>> {
    if chains.len() < 2 {
        return Err(Error::validation("need at least two chains"));
    }
    let dim = chains[0].dim();
    if chains.iter().any(|c| c.dim() != dim) {
        return Err(Error::validation("chains differ in dimension"));
    }
    let len = chains[0].len();
    if chains.iter().any(|c| c.len() != len) {
        return Err(Error::validation("chains must have equal lengths"));
    }
    (0..dim)
        .map(|j| psrf(&chains.iter().map(|c| c.column(j)).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssAcf {
    pub ess: f64,
    pub acf: Vec<f64>,
    pub warning: Option<String>,
}

fn autocovariance(centered: &[f64], lag: usize) -> f64 {
    let n = centered.len();
    centered[..n - lag]
        .iter()
        .zip(&centered[lag..])
        .map(|(a, b)| a * b)
        .sum::<f64>()
        / n as f64
}

/// ESS via Geyer's initial positive sequence, plus the ACF up to `max_lag`.
pub fn ess_and_acf(draws: &[f64], max_lag: usize) -> Result<EssAcf> {
    let n = draws.len();
    if max_lag < 1 || n <= max_lag {
        return Err(Error::domain(format!(
            "need 1 <= max_lag < number of draws (max_lag {max_lag}, draws {n})"
        )));
    }
    let m = draws.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = draws.iter().map(|x| x - m).collect();
    let gamma0 = autocovariance(&centered, 0);
    if !(gamma0 > 0.0) {
        let msg = "zero-variance column; ESS set to the number of draws".to_string();
        warn!("{msg}");
        let mut acf = vec![0.0; max_lag + 1];
        acf[0] = 1.0;
        return Ok(EssAcf {
            ess: n as f64,
            acf,
            warning: Some(msg),
        });
    }
    let rho = |k: usize| autocovariance(&centered, k) / gamma0;
    let mut acf = Vec::with_capacity(max_lag + 1);
    acf.push(1.0);
    acf.extend((1..=max_lag).map(rho));

    let mut sum_pairs = 0.0;
    let mut k = 0;
    while k + 1 < n {
        let r0 = if k <= max_lag { acf[k] } else { rho(k) };
        let r1 = if k < max_lag { acf[k + 1] } else { rho(k + 1) };
        let pair = r0 + r1;
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        k += 2;
    }
    let tau = (-1.0 + 2.0 * sum_pairs).max(1.0 / n as f64);
    Ok(EssAcf {
        ess: n as f64 / tau,
        acf,
        warning: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamConvergence {
    pub name: String,
    pub psrf: Option<f64>,
    pub ess: f64,
    pub acf: Vec<f64>,
}

/// PSRF across all chains (when more than one) and ESS/ACF of the first chain.
pub fn convergence_report(chains: &[Chain], max_lag: usize) -> Result<Vec<ParamConvergence>> {
    let first = chains
        .first()
        .ok_or_else(|| Error::validation("no chains given"))?;
    let psrfs = if chains.len() > 1 {
        Some(gelman_rubin(chains)?)
    } else {
        None
    };
    let lag = max_lag.min(first.len().saturating_sub(1)).max(1);
    (0..first.dim())
        .map(|j| {
            let e = ess_and_acf(&first.column(j), lag)?;
            Ok(ParamConvergence {
                name: first.labels[j].clone(),
                psrf: psrfs.as_ref().map(|p| p[j]),
                ess: e.ess,
                acf: e.acf,
            })
        })
        .collect()
}
