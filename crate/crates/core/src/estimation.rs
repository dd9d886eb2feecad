//! Bayes estimators, baseline estimates and posterior summaries from a chain.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BaselineEstimates, Dataset, Grid, ParamLayout};
use crate::sampler::Chain;

/// Default BCI level.
pub const BCI_LEVEL: f64 = 0.95;
/// Fewest draws for which an empirical credible interval is reported.
pub const MIN_BCI_DRAWS: usize = 20;

/// Posterior means on the reporting scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesEstimates {
    /// Mean of `exp(φ*_d)`.
    pub phi_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub beta1_hat: Vec<f64>,
    pub beta2_hat: Vec<f64>,
    /// Mean of `exp(ψ*)`.
    pub psi_hat: f64,
}

/// Mean computed around the first value, so constant input returns that value exactly.
pub(crate) fn shifted_mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut it = values.into_iter();
    let Some(first) = it.next() else {
        return f64::NAN;
    };
    let (mut n, mut acc) = (1usize, 0.0);
    for v in it {
        acc += v - first;
        n += 1;
    }
    first + acc / n as f64
}

pub(crate) fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let m = shifted_mean(values.iter().copied());
    if values.len() < 2 {
        return (m, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (m, (ss / (values.len() as f64 - 1.0)).sqrt())
}

fn require_draws(chain: &Chain) -> Result<ParamLayout> {
    if chain.is_empty() {
        return Err(Error::validation("chain has no draws"));
    }
    chain.layout_or_err()
}

/// Empirical averages of `exp(φ*)`, `ν`, `β₁`, `β₂` and `exp(ψ*)` over the draws.
pub fn bayes_estimates(chain: &Chain) -> Result<BayesEstimates> {
    let layout = require_draws(chain)?;
    let col_mean = |j: usize, f: fn(f64) -> f64| shifted_mean(chain.rows().map(|r| f(r[j])));
    let ident = |x: f64| x;
    Ok(BayesEstimates {
        phi_hat: layout.phi_star().map(|j| col_mean(j, f64::exp)).collect(),
        nu_hat: layout.nu().map(|j| col_mean(j, ident)).collect(),
        beta1_hat: layout.beta1().map(|j| col_mean(j, ident)).collect(),
        beta2_hat: layout.beta2().map(|j| col_mean(j, ident)).collect(),
        psi_hat: col_mean(layout.psi_star(), f64::exp),
    })
}

/// `Λ̃₁₀` with slopes `φ̃_d` and `Λ̃₂₀` with jumps `exp(ν̃_d)` on `grid`.
pub fn baseline_estimates(chain: &Chain, grid: &Grid) -> Result<BaselineEstimates> {
    let layout = require_draws(chain)?;
    if layout.n_grid != grid.len() {
        return Err(Error::validation(format!(
            "chain has {} baseline pieces, grid has {}",
            layout.n_grid,
            grid.len()
        )));
    }
    let est = bayes_estimates(chain)?;
    BaselineEstimates::new(grid.clone(), est.phi_hat, est.nu_hat)
}

/// Linear interpolation between order statistics (`h = (n−1)p`).
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Equal-tailed interval at `(1−level)/2` and `1−(1−level)/2`.
pub fn credible_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::domain(format!("credible level must lie in (0,1), got {level}")));
    }
    if draws.len() < MIN_BCI_DRAWS {
        return Err(Error::validation(format!(
            "credible interval needs at least {MIN_BCI_DRAWS} draws, got {}",
            draws.len()
        )));
    }
    if draws.iter().any(|v| v.is_nan()) {
        return Err(Error::numeric("draws", "NaN in posterior draws"));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&sorted, tail), quantile_sorted(&sorted, 1.0 - tail)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub estimate: f64,
    pub psd: f64,
    /// `None` when the chain is too short for an empirical interval.
    pub bci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub parameters: Vec<ParamSummary>,
    pub estimates: BayesEstimates,
    pub baseline: BaselineEstimates,
    pub s0: usize,
    pub level: f64,
    /// Scale on which PSD and BCI of φ and ψ are computed.
    pub positive_block_scale: String,
}

impl FitSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// Aligned plain-text table: Parameter, Estimate, PSD, BCI.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let pct = (self.level * 100.0).round();
        let _ = writeln!(
            out,
            "{:<12} {:>12} {:>12}   {:<28}",
            "Parameter", "Estimate", "PSD", format!("{pct}% BCI")
        );
        for p in &self.parameters {
            let bci = match p.bci {
                Some((lo, hi)) => format!("({lo:.4}, {hi:.4})"),
                None => "-".to_string(),
            };
            let _ = writeln!(out, "{:<12} {:>12.4} {:>12.4}   {:<28}", p.name, p.estimate, p.psd, bci);
        }
        let _ = writeln!(out, "retained draws: {}", self.s0);
        out
    }
}

fn summarize_column(name: String, values: Vec<f64>, level: f64) -> Result<ParamSummary> {
    let (estimate, psd) = mean_and_sd(&values);
    let bci = if values.len() >= MIN_BCI_DRAWS {
        Some(credible_interval(&values, level)?)
    } else {
        None
    };
    Ok(ParamSummary {
        name,
        estimate,
        psd,
        bci,
    })
}

/// Per-parameter posterior mean, PSD and BCI on the reporting scale
/// (`exp` for φ and ψ, identity otherwise).
pub fn summarize(chain: &Chain, data: &Dataset) -> Result<FitSummary> {
    summarize_at(chain, data, BCI_LEVEL)
}

pub fn summarize_at(chain: &Chain, data: &Dataset, level: f64) -> Result<FitSummary> {
    let layout = require_draws(chain)?;
    if layout != data.layout() {
        return Err(Error::validation(format!(
            "chain layout {:?} does not match dataset layout {:?}",
            layout,
            data.layout()
        )));
    }
    let estimates = bayes_estimates(chain)?;
    let baseline = baseline_estimates(chain, data.grid())?;
    let mut parameters = Vec::with_capacity(layout.dim());
    let exp_col = |j: usize| chain.column(j).into_iter().map(f64::exp).collect::<Vec<_>>();
    for (d, j) in layout.phi_star().enumerate() {
        parameters.push(summarize_column(format!("phi_{}", d + 1), exp_col(j), level)?);
    }
    for (d, j) in layout.nu().enumerate() {
        parameters.push(summarize_column(format!("nu_{}", d + 1), chain.column(j), level)?);
    }
    for (k, j) in layout.beta1().enumerate() {
        parameters.push(summarize_column(format!("beta1_{}", k + 1), chain.column(j), level)?);
    }
    for (k, j) in layout.beta2().enumerate() {
        parameters.push(summarize_column(format!("beta2_{}", k + 1), chain.column(j), level)?);
    }
    parameters.push(summarize_column("psi".into(), exp_col(layout.psi_star()), level)?);
    Ok(FitSummary {
        parameters,
        estimates,
        baseline,
        s0: chain.len(),
        level,
        positive_block_scale: "back-transformed (exp of working scale)".into(),
    })
}
