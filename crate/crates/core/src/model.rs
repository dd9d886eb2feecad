//! Data model, baseline reparameterizations and the frailty-integrated likelihood.
//!
//! The recurrent-event count `N(u)` is a mixed Poisson process with mean
//! `ω Λ₁₀(u) exp(β₁'x₁)` and the terminal event has cumulative hazard
//! `ω Λ₂₀(u) exp(β₂'x₂)`, both sharing a gamma frailty `ω` with mean one and
//! variance `ψ`. Integrating `ω` out gives a closed form per subject, which is
//! evaluated here entirely on the log scale.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// One subject: monitoring time, status, count and the two covariate vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub u: f64,
    pub delta: u8,
    pub n_count: u64,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

impl Observation {
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if !(self.u.is_finite() && self.u > 0.0) {
            return Err(Error::validation(format!(
                "monitoring time must be positive and finite, got {}",
                self.u
            )));
        }
        if self.delta > 1 {
            return Err(Error::validation(format!(
                "status indicator must be 0 or 1, got {}",
                self.delta
            )));
        }
        if self.x1.len() != p || self.x2.len() != q {
            return Err(Error::validation(format!(
                "covariate lengths ({}, {}) do not match declared (p, q) = ({p}, {q})",
                self.x1.len(),
                self.x2.len()
            )));
        }
        if self.x1.iter().chain(&self.x2).any(|x| !x.is_finite()) {
            return Err(Error::validation("non-finite covariate value"));
        }
        Ok(())
    }
}

/// Strictly increasing positive monitoring grid `v₁ < … < vₙ′` (with `v₀ = 0` implicit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Grid(Vec<f64>);

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::validation("grid must contain at least one time"));
        }
        let mut prev = 0.0;
        for &v in &points {
            if !v.is_finite() || v <= prev {
                return Err(Error::validation(format!(
                    "grid must be strictly increasing and positive (offending value {v})"
                )));
            }
            prev = v;
        }
        Ok(Grid(points))
    }

    /// Sorted distinct values of `times`.
    pub fn from_times(times: impl IntoIterator<Item = f64>) -> Result<Self> {
        let mut v: Vec<f64> = times.into_iter().collect();
        if v.iter().any(|t| t.is_nan()) {
            return Err(Error::validation("NaN monitoring time"));
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        Grid::new(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Index `d` (0-based) with `v_d == t` exactly.
    pub fn position(&self, t: f64) -> Option<usize> {
        self.0
            .binary_search_by(|v| v.partial_cmp(&t).unwrap_or(std::cmp::Ordering::Less))
            .ok()
    }

    /// Interval widths `v_d − v_{d−1}`.
    pub fn widths(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.0
            .iter()
            .map(|&v| {
                let w = v - prev;
                prev = v;
                w
            })
            .collect()
    }
}

impl TryFrom<Vec<f64>> for Grid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Grid::new(v)
    }
}

impl From<Grid> for Vec<f64> {
    fn from(g: Grid) -> Self {
        g.0
    }
}

fn distinct_records(observations: &[Observation], grid_index: &[usize]) -> Vec<(usize, f64)> {
    type Key = (usize, u8, u64, Vec<u64>, Vec<u64>);
    let mut seen: HashMap<Key, usize> = HashMap::new();
    let mut patterns: Vec<(usize, f64)> = Vec::new();
    for (i, (o, &d)) in observations.iter().zip(grid_index).enumerate() {
        let key = (
            d,
            o.delta,
            o.n_count,
            o.x1.iter().map(|v| v.to_bits()).collect(),
            o.x2.iter().map(|v| v.to_bits()).collect(),
        );
        match seen.get(&key) {
            Some(&k) => patterns[k].1 += 1.0,
            None => {
                seen.insert(key, patterns.len());
                patterns.push((i, 1.0));
            }
        }
    }
    patterns
}

/// Observations plus the grid on which the baselines are parameterized.
#[derive(Debug, Clone)]
pub struct Dataset {
    observations: Vec<Observation>,
    grid: Grid,
    p: usize,
    q: usize,
    grid_index: Vec<usize>,
    max_count: u64,
    /// Distinct records as (first subject index, multiplicity).
    patterns: Vec<(usize, f64)>,
}

impl Dataset {
    /// Validates every observation and requires each `u` to sit exactly on the grid.
    pub fn new(observations: Vec<Observation>, grid: Grid, p: usize, q: usize) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::validation("dataset must contain at least one observation"));
        }
        let mut grid_index = Vec::with_capacity(observations.len());
        for (i, obs) in observations.iter().enumerate() {
            obs.validate(p, q).map_err(|e| Error::Observation {
                index: i,
                source: Box::new(e),
            })?;
            let d = grid.position(obs.u).ok_or_else(|| Error::Observation {
                index: i,
                source: Box::new(Error::validation(format!(
                    "monitoring time {} is not on the fit grid",
                    obs.u
                ))),
            })?;
            grid_index.push(d);
        }
        let max_count = observations.iter().map(|o| o.n_count).max().unwrap_or(0);
        let patterns = distinct_records(&observations, &grid_index);
        Ok(Dataset {
            observations,
            grid,
            p,
            q,
            grid_index,
            max_count,
            patterns,
        })
    }

    /// Builds the grid from the sorted distinct monitoring times.
    pub fn with_inferred_grid(observations: Vec<Observation>, p: usize, q: usize) -> Result<Self> {
        let grid = Grid::from_times(observations.iter().map(|o| o.u))?;
        Dataset::new(observations, grid, p, q)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_grid: self.grid.len(),
            p: self.p,
            q: self.q,
        }
    }

    /// Grid index of each observation's monitoring time.
    pub fn max_count(&self) -> u64 {
        self.max_count
    }

    pub fn grid_index(&self) -> &[usize] {
        &self.grid_index
    }
}

/// Block sizes of the working-scale parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub n_grid: usize,
    pub p: usize,
    pub q: usize,
}

impl ParamLayout {
    pub fn dim(&self) -> usize {
        2 * self.n_grid + self.p + self.q + 1
    }

    pub fn phi_star(&self) -> std::ops::Range<usize> {
        0..self.n_grid
    }

    pub fn nu(&self) -> std::ops::Range<usize> {
        self.n_grid..2 * self.n_grid
    }

    pub fn beta1(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n_grid;
        s..s + self.p
    }

    pub fn beta2(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n_grid + self.p;
        s..s + self.q
    }

    pub fn psi_star(&self) -> usize {
        self.dim() - 1
    }

    /// Column labels in flat order.
    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend((1..=self.n_grid).map(|d| format!("phi_star_{d}")));
        out.extend((1..=self.n_grid).map(|d| format!("nu_{d}")));
        out.extend((1..=self.p).map(|j| format!("beta1_{j}")));
        out.extend((1..=self.q).map(|j| format!("beta2_{j}")));
        out.push("psi_star".to_string());
        out
    }
}

/// Working-scale parameters `(φ*, ν, β₁, β₂, ψ*)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub phi_star: Vec<f64>,
    pub nu: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    pub psi_star: f64,
}

impl ParamVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            phi_star: vec![0.0; layout.n_grid],
            nu: vec![0.0; layout.n_grid],
            beta1: vec![0.0; layout.p],
            beta2: vec![0.0; layout.q],
            psi_star: 0.0,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_grid: self.phi_star.len(),
            p: self.beta1.len(),
            q: self.beta2.len(),
        }
    }

    pub fn from_flat(layout: ParamLayout, flat: &[f64]) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::validation(format!(
                "parameter vector has length {}, expected {}",
                flat.len(),
                layout.dim()
            )));
        }
        Ok(ParamVector {
            phi_star: flat[layout.phi_star()].to_vec(),
            nu: flat[layout.nu()].to_vec(),
            beta1: flat[layout.beta1()].to_vec(),
            beta2: flat[layout.beta2()].to_vec(),
            psi_star: flat[layout.psi_star()],
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().dim());
        out.extend_from_slice(&self.phi_star);
        out.extend_from_slice(&self.nu);
        out.extend_from_slice(&self.beta1);
        out.extend_from_slice(&self.beta2);
        out.push(self.psi_star);
        out
    }

    /// Names the first block holding a non-finite entry.
    pub fn check_finite(&self) -> Result<()> {
        let blocks: [(&str, &[f64]); 5] = [
            ("phi_star", &self.phi_star),
            ("nu", &self.nu),
            ("beta1", &self.beta1),
            ("beta2", &self.beta2),
            ("psi_star", std::slice::from_ref(&self.psi_star)),
        ];
        for (name, values) in blocks {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(name, "non-finite parameter value"));
            }
        }
        Ok(())
    }

    fn check_layout(&self, grid: &Grid, p: usize, q: usize) -> Result<()> {
        let l = self.layout();
        if l.n_grid != grid.len() || self.nu.len() != grid.len() || l.p != p || l.q != q {
            return Err(Error::validation(format!(
                "parameter blocks (n'={}, |nu|={}, p={}, q={}) do not match data (n'={}, p={p}, q={q})",
                l.n_grid,
                self.nu.len(),
                l.p,
                l.q,
                grid.len()
            )));
        }
        Ok(())
    }
}

/// Posterior baseline summaries: rate estimates `φ̃_d` and jump log-sizes `ν̃_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimates {
    pub grid: Grid,
    pub phi_hat: Vec<f64>,
    pub nu_hat: Vec<f64>,
}

impl BaselineEstimates {
    pub fn new(grid: Grid, phi_hat: Vec<f64>, nu_hat: Vec<f64>) -> Result<Self> {
        if phi_hat.len() != grid.len() || nu_hat.len() != grid.len() {
            return Err(Error::validation("baseline estimates do not match grid length"));
        }
        if phi_hat.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::validation("rate estimates must be positive"));
        }
        Ok(BaselineEstimates {
            grid,
            phi_hat,
            nu_hat,
        })
    }

    /// `Λ̃₁₀(t) = Σ φ̃_d Δ_d(t)`.
    pub fn lambda10(&self, t: f64) -> Result<f64> {
        let inc = delta_increments(t, &self.grid)?;
        Ok(inc.iter().zip(&self.phi_hat).map(|(d, p)| d * p).sum())
    }

    /// `Λ̃₂₀(t) = Σ_{v_d ≤ t} exp(ν̃_d)`.
    pub fn lambda20(&self, t: f64) -> Result<f64> {
        eval_lambda20(&self.nu_hat, &self.grid, t)
    }
}

/// `Δ_d(t) = min(v_d, t) − min(v_{d−1}, t)` for `d = 1..n′`.
pub fn delta_increments(t: f64, grid: &Grid) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    let mut prev = 0.0_f64;
    Ok(grid
        .points()
        .iter()
        .map(|&v| {
            let d = v.min(t) - prev.min(t);
            prev = v;
            d
        })
        .collect())
}

/// Piecewise linear baseline mean with slopes `exp(φ*_d)`; saturates beyond `vₙ′`.
pub fn eval_lambda10(phi_star: &[f64], grid: &Grid, t: f64) -> Result<f64> {
    if phi_star.len() != grid.len() {
        return Err(Error::validation("phi_star length does not match grid"));
    }
    let inc = delta_increments(t, grid)?;
    Ok(inc
        .iter()
        .zip(phi_star)
        .map(|(d, p)| if *d > 0.0 { p.exp() * d } else { 0.0 })
        .sum())
}

/// Right-continuous step baseline cumulative hazard with jumps `exp(ν_d)` at `v_d`.
pub fn eval_lambda20(nu: &[f64], grid: &Grid, t: f64) -> Result<f64> {
    if nu.len() != grid.len() {
        return Err(Error::validation("nu length does not match grid"));
    }
    if !(t >= 0.0) {
        return Err(Error::domain(format!("time must be non-negative, got {t}")));
    }
    Ok(grid
        .points()
        .iter()
        .zip(nu)
        .take_while(|(v, _)| **v <= t)
        .map(|(_, n)| n.exp())
        .sum())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ln(1 + eˣ)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 − e⁻ʳ)` for `r > 0`.
pub(crate) fn log1mexp(r: f64) -> f64 {
    if r < std::f64::consts::LN_2 {
        (-(-r).exp_m1()).ln()
    } else {
        (-(-r).exp()).ln_1p()
    }
}

/// Quantities shared by every subject for one parameter value.
struct Shared {
    psi_star: f64,
    inv_psi: f64,
    /// `ln Γ(N + 1/ψ) − ln Γ(1/ψ)` for `N = 0, 1, …` up to the largest tabulated count.
    gamma_ratio: Vec<f64>,
}

const MAX_TABULATED_COUNT: u64 = 4096;

impl Shared {
    fn new(theta: &ParamVector, max_count: u64) -> Result<Self> {
        let psi_star = theta.psi_star;
        let inv_psi = (-psi_star).exp();
        if !(inv_psi.is_finite() && inv_psi > 0.0) {
            return Err(Error::numeric("psi_star", "frailty precision out of range"));
        }
        let top = max_count.min(MAX_TABULATED_COUNT) as usize;
        let mut gamma_ratio = Vec::with_capacity(top + 1);
        gamma_ratio.push(0.0);
        let mut acc = 0.0;
        for j in 0..top {
            acc += (inv_psi + j as f64).ln();
            gamma_ratio.push(acc);
        }
        Ok(Shared {
            psi_star,
            inv_psi,
            gamma_ratio,
        })
    }

    fn gamma_ratio(&self, n: u64) -> f64 {
        match self.gamma_ratio.get(n as usize) {
            Some(v) => *v,
            None => ln_gamma(n as f64 + self.inv_psi) - ln_gamma(self.inv_psi),
        }
    }
}

fn check_baselines(lambda10: f64, lambda20: f64) -> Result<()> {
    if !lambda10.is_finite() {
        return Err(Error::numeric("phi_star", "baseline mean overflowed"));
    }
    if !lambda20.is_finite() {
        return Err(Error::numeric("nu", "baseline cumulative hazard overflowed"));
    }
    Ok(())
}

/// Log of one subject's factor given the log baselines at `u`.
///
/// With `a = ψΛ₁₀e^{β₁'x₁}`, `b = ψΛ₂₀e^{β₂'x₂}` and `c = N + 1/ψ` the factor is
/// `Γ(c)/Γ(1/ψ) · aᴺ · (1+a+b)^{−c}` when the terminal event has not occurred,
/// and `Γ(c)/Γ(1/ψ) · aᴺ · [(1+a)^{−c} − (1+a+b)^{−c}]` when it has.
fn term_from_baselines(
    log_l10: f64,
    log_l20: f64,
    theta: &ParamVector,
    shared: &Shared,
    obs: &Observation,
) -> Result<f64> {
    let eta1 = dot(&theta.beta1, &obs.x1);
    if !eta1.is_finite() {
        return Err(Error::numeric("beta1", "non-finite linear predictor"));
    }
    let eta2 = dot(&theta.beta2, &obs.x2);
    if !eta2.is_finite() {
        return Err(Error::numeric("beta2", "non-finite linear predictor"));
    }
    let n = obs.n_count as f64;
    let c = n + shared.inv_psi;

    let log_a = shared.psi_star + log_l10 + eta1;
    let log_b = shared.psi_star + log_l20 + eta2;

    let count_part = if obs.n_count > 0 { n * log_a } else { 0.0 };
    let log1p_a = softplus(log_a);
    // ln(1+a+b) = ln(1+a) + ln(1 + b/(1+a))
    let log_ratio = (log_b - log1p_a).exp().ln_1p();

    let status_part = if obs.delta == 0 {
        -c * (log1p_a + log_ratio)
    } else {
        let r = c * log_ratio;
        if !(r > 0.0) {
            return Err(Error::numeric(
                "nu",
                "event probability underflowed for an observed event",
            ));
        }
        -c * log1p_a + log1mexp(r)
    };
    let value = shared.gamma_ratio(obs.n_count) + count_part + status_part;
    if !value.is_finite() {
        return Err(Error::numeric("likelihood", "non-finite log-likelihood term"));
    }
    Ok(value)
}

/// Log of a single subject's frailty-integrated likelihood factor (up to the `N!` constant).
pub fn log_likelihood_term(theta: &ParamVector, obs: &Observation, grid: &Grid) -> Result<f64> {
    theta.check_finite()?;
    theta.check_layout(grid, obs.x1.len(), obs.x2.len())?;
    let l10 = eval_lambda10(&theta.phi_star, grid, obs.u)?;
    let l20 = eval_lambda20(&theta.nu, grid, obs.u)?;
    check_baselines(l10, l20)?;
    let shared = Shared::new(theta, obs.n_count)?;
    term_from_baselines(l10.ln(), l20.ln(), theta, &shared, obs)
}

/// Baselines evaluated at every grid point; `O(n′)` once per parameter value.
pub(crate) fn cumulative_baselines(theta: &ParamVector, grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let mut l10 = Vec::with_capacity(grid.len());
    let mut l20 = Vec::with_capacity(grid.len());
    let (mut s10, mut s20) = (0.0, 0.0);
    for ((w, p), nu) in grid.widths().iter().zip(&theta.phi_star).zip(&theta.nu) {
        s10 += p.exp() * w;
        s20 += nu.exp();
        l10.push(s10);
        l20.push(s20);
    }
    (l10, l20)
}

struct Prepared {
    log10: Vec<f64>,
    log20: Vec<f64>,
    shared: Shared,
}

fn prepare(theta: &ParamVector, data: &Dataset) -> Result<Prepared> {
    theta.check_finite()?;
    theta.check_layout(data.grid(), data.p(), data.q())?;
    let (l10, l20) = cumulative_baselines(theta, data.grid());
    let mut log10 = Vec::with_capacity(l10.len());
    let mut log20 = Vec::with_capacity(l20.len());
    for (a, b) in l10.iter().zip(&l20) {
        check_baselines(*a, *b)?;
        log10.push(a.ln());
        log20.push(b.ln());
    }
    Ok(Prepared {
        log10,
        log20,
        shared: Shared::new(theta, data.max_count())?,
    })
}

impl Prepared {
    fn term(&self, theta: &ParamVector, data: &Dataset, i: usize) -> Result<f64> {
        let d = data.grid_index[i];
        term_from_baselines(self.log10[d], self.log20[d], theta, &self.shared, &data.observations[i])
            .map_err(|e| Error::Observation {
                index: i,
                source: Box::new(e),
            })
    }
}

/// Per-subject log-likelihood terms, in dataset order.
pub fn log_likelihood_terms(theta: &ParamVector, data: &Dataset) -> Result<Vec<f64>> {
    let prep = prepare(theta, data)?;
    (0..data.len()).map(|i| prep.term(theta, data, i)).collect()
}

/// Sum of the per-subject terms.
/// Duplicate records are evaluated once and weighted by their multiplicity.
pub fn log_likelihood(theta: &ParamVector, data: &Dataset) -> Result<f64> {
    let prep = prepare(theta, data)?;
    let mut total = 0.0;
    for &(i, weight) in &data.patterns {
        total += weight * prep.term(theta, data, i)?;
    }
    Ok(total)
}

/// `Λ̃₁(t|x₁) = Λ̃₁₀(t) exp(β̃₁'x₁)`.
pub fn marginal_mean(t: f64, x1: &[f64], est: &BaselineEstimates, beta1_hat: &[f64]) -> Result<f64> {
    if x1.len() != beta1_hat.len() {
        return Err(Error::validation("x1 and beta1 lengths differ"));
    }
    Ok(est.lambda10(t)? * dot(beta1_hat, x1).exp())
}

/// `S̃₂(t|x₂) = (1 + ψ̃ Λ̃₂₀(t) exp(β̃₂'x₂))^{−1/ψ̃}`.
pub fn marginal_survival(
    t: f64,
    x2: &[f64],
    est: &BaselineEstimates,
    beta2_hat: &[f64],
    psi_hat: f64,
) -> Result<f64> {
    if x2.len() != beta2_hat.len() {
        return Err(Error::validation("x2 and beta2 lengths differ"));
    }
    if !(psi_hat > 0.0) {
        return Err(Error::domain("frailty variance must be positive"));
    }
    let cum = est.lambda20(t)? * dot(beta2_hat, x2).exp();
    Ok((-(psi_hat * cum).ln_1p() / psi_hat).exp())
}
