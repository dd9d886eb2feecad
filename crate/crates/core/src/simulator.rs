//! Synthetic current status + current count data and replication studies.

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{mean_and_sd, summarize};
use crate::fit::fit_posterior;
use crate::model::{Dataset, Grid, Observation};
use crate::priors::{ar1_correlation, GaussianBlock, PriorSpec, DEFAULT_PRIOR_VARIANCE};
use crate::sampler::{stream_rng, MCMCConfig};

/// Mixture components `(weight, μ, σ²)` of the misspecified frailty; each has mean one.
pub const MIXTURE_COMPONENTS: [(f64, f64, f64); 2] = [(0.5, -0.32, 0.64), (0.5, -0.125, 0.25)];
/// Lag-one correlation of the ν prior.
pub const NU_PRIOR_RHO: f64 = 0.2;
/// Prior mean of β and ψ*.
pub const REGRESSION_PRIOR_MEAN: f64 = 1.0;
/// Largest tolerated fraction of failed replicates.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

/// Monitoring-time scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Censoring {
    /// Equal-probability allocation over the fixed grid.
    #[default]
    FixedGrid,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frailty {
    #[default]
    Gamma,
    LognormalMixture,
}

fn default_grid() -> Vec<f64> {
    (1..=10).map(|d| d as f64 / 10.0).collect()
}

fn default_psi() -> f64 {
    1.0
}

fn default_n() -> usize {
    500
}

fn default_lambda10_power() -> f64 {
    0.9
}

fn default_lambda20_power() -> f64 {
    1.3
}

/// Data-generating scenario. Truth curves are `Λ₁₀(t) = t^a`, `Λ₂₀(t) = t^b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub beta11: f64,
    pub beta21: f64,
    /// Frailty variance; ignored for the mixture frailty.
    #[serde(default = "default_psi")]
    pub psi: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub censoring: Censoring,
    #[serde(default)]
    pub frailty: Frailty,
    #[serde(default = "default_grid")]
    pub fixed_grid: Vec<f64>,
    #[serde(default = "default_lambda10_power")]
    pub lambda10_power: f64,
    #[serde(default = "default_lambda20_power")]
    pub lambda20_power: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    /// Gamma frailty, fixed grid 0.1..1.0, n = 500.
    pub fn new(beta11: f64, beta21: f64, psi: f64) -> Self {
        Scenario {
            beta11,
            beta21,
            psi,
            n: default_n(),
            censoring: Censoring::FixedGrid,
            frailty: Frailty::Gamma,
            fixed_grid: default_grid(),
            lambda10_power: default_lambda10_power(),
            lambda20_power: default_lambda20_power(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(format!("scenario: {m}")));
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if !(self.beta11.is_finite() && self.beta21.is_finite()) {
            return fail("regression coefficients must be finite".into());
        }
        if self.frailty == Frailty::Gamma && !(self.psi > 0.0 && self.psi.is_finite()) {
            return fail(format!("psi must be positive, got {}", self.psi));
        }
        if !(self.lambda10_power > 0.0 && self.lambda20_power > 0.0) {
            return fail("truth exponents must be positive".into());
        }
        if self.censoring == Censoring::FixedGrid {
            Grid::new(self.fixed_grid.clone())
                .map_err(|e| Error::validation(format!("scenario: fixed_grid: {e}")))?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_toml_str(&text, path)
    }

    pub fn lambda10_truth(&self, t: f64) -> f64 {
        t.powf(self.lambda10_power)
    }

    pub fn lambda20_truth(&self, t: f64) -> f64 {
        t.powf(self.lambda20_power)
    }

    /// ψ is only a model parameter under gamma frailty.
    pub fn psi_truth(&self) -> Option<f64> {
        (self.frailty == Frailty::Gamma).then_some(self.psi)
    }
}

/// Draws one frailty value.
pub fn sample_frailty<R: Rng + ?Sized>(frailty: Frailty, psi: f64, rng: &mut R) -> f64 {
    match frailty {
        Frailty::Gamma => Gamma::new(1.0 / psi, psi)
            .expect("validated frailty variance")
            .sample(rng),
        Frailty::LognormalMixture => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = MIXTURE_COMPONENTS[MIXTURE_COMPONENTS.len() - 1];
            for c in MIXTURE_COMPONENTS {
                acc += c.0;
                if u < acc {
                    pick = c;
                    break;
                }
            }
            LogNormal::new(pick.1, pick.2.sqrt())
                .expect("fixed mixture parameters")
                .sample(rng)
        }
    }
}

/// `Σ_k w_k (e^{σ_k²} − 1)`, the variance of the mean-one lognormal mixture.
pub fn mixture_variance() -> f64 {
    MIXTURE_COMPONENTS
        .iter()
        .map(|(w, mu, s2)| w * ((2.0 * mu + 2.0 * s2).exp()))
        .sum::<f64>()
        - 1.0
}

fn poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("finite positive mean").sample(rng) as u64
}

/// Draws one dataset; identical scenarios (including the seed) give identical data.
pub fn simulate_dataset(scenario: &Scenario) -> Result<Dataset> {
    scenario.validate()?;
    let mut rng = stream_rng(scenario.seed, 0);
    let mut observations = Vec::with_capacity(scenario.n);
    for _ in 0..scenario.n {
        let u = match scenario.censoring {
            Censoring::FixedGrid => {
                scenario.fixed_grid[rng.random_range(0..scenario.fixed_grid.len())]
            }
            Censoring::Uniform => loop {
                let v: f64 = rng.random();
                if v > 0.0 {
                    break v;
                }
            },
        };
        let x11 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let x21 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let omega = sample_frailty(scenario.frailty, scenario.psi, &mut rng);
        let n_count = poisson(omega * scenario.lambda10_truth(u) * (scenario.beta11 * x11).exp(), &mut rng);
        let hazard = omega * scenario.lambda20_truth(u) * (scenario.beta21 * x21).exp();
        let delta = rng.random_bool(-(-hazard).exp_m1()) as u8;
        observations.push(Observation {
            u,
            delta,
            n_count,
            x1: vec![x11],
            x2: vec![x21],
        });
    }
    match scenario.censoring {
        Censoring::FixedGrid => Dataset::new(observations, Grid::new(scenario.fixed_grid.clone())?, 1, 1),
        Censoring::Uniform => Dataset::with_inferred_grid(observations, 1, 1),
    }
}

/// Priors centred on the truth curves over `grid`: φ* ~ N(·, 100·I), ν ~ N(ϑ, Σ(0.2)),
/// β and ψ* ~ N(1, 100).
pub fn default_priors(scenario: &Scenario, grid: &Grid) -> Result<PriorSpec> {
    let v = grid.points();
    let mut phi_mean = Vec::with_capacity(v.len());
    let mut nu_mean = Vec::with_capacity(v.len());
    let mut prev = 0.0;
    for &t in v {
        let inc10 = scenario.lambda10_truth(t) - scenario.lambda10_truth(prev);
        let inc20 = scenario.lambda20_truth(t) - scenario.lambda20_truth(prev);
        phi_mean.push((inc10 / (t - prev)).ln());
        nu_mean.push(inc20.ln());
        prev = t;
    }
    let d = v.len();
    let phi = GaussianBlock::diagonal("phi_star", phi_mean, &vec![DEFAULT_PRIOR_VARIANCE; d])?;
    let nu = GaussianBlock::new("nu", nu_mean, ar1_correlation(d, NU_PRIOR_RHO)?)?;
    let reg = |name: &str| {
        GaussianBlock::diagonal(name, vec![REGRESSION_PRIOR_MEAN], &[DEFAULT_PRIOR_VARIANCE])
    };
    PriorSpec::new(phi, nu, reg("beta1")?, reg("beta2")?, reg("psi_star")?)
}

/// How replicate seeds derive from the scenario and MCMC seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// Fresh data and fresh MCMC randomness per replicate.
    #[default]
    Independent,
    /// One dataset reused by every replicate; only MCMC randomness varies.
    SharedData,
    /// Every replicate identical.
    Identical,
}

fn derive_seed(master: u64, stream: u64) -> u64 {
    stream_rng(master, stream).next_u64()
}

fn replicate_seeds(policy: SeedPolicy, scenario_seed: u64, mcmc_seed: u64, k: usize) -> (u64, u64) {
    match policy {
        SeedPolicy::Independent => (
            derive_seed(scenario_seed, 2 * k as u64 + 1),
            derive_seed(mcmc_seed, 2 * k as u64 + 2),
        ),
        SeedPolicy::SharedData => (scenario_seed, derive_seed(mcmc_seed, 2 * k as u64 + 2)),
        SeedPolicy::Identical => (scenario_seed, mcmc_seed),
    }
}

/// Points at which baseline mean squared errors are averaged.
pub fn mse_points() -> Vec<f64> {
    default_grid()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub data_seed: u64,
    pub mcmc_seed: u64,
    /// Posterior means of β₁₁, β₂₁, ψ.
    pub means: [f64; 3],
    pub psds: [f64; 3],
    pub covered: [bool; 3],
    pub mse_lambda10: f64,
    pub mse_lambda20: f64,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

/// Operating characteristics of one parameter across replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAggregate {
    #[serde(rename = "Parameter")]
    pub name: String,
    #[serde(rename = "Truth")]
    pub truth: f64,
    #[serde(rename = "Mean")]
    pub mean: f64,
    #[serde(rename = "Abs.bias")]
    pub abs_bias: f64,
    #[serde(rename = "ESD")]
    pub esd: f64,
    #[serde(rename = "SSE")]
    pub sse: f64,
    #[serde(rename = "CP")]
    pub cp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub scenario: Scenario,
    pub mcmc: MCMCConfig,
    pub seed_policy: SeedPolicy,
    pub requested: usize,
    /// Replicates that completed and enter the aggregates.
    #[serde(rename = "R")]
    pub completed: usize,
    pub parameters: Vec<ParamAggregate>,
    #[serde(rename = "MeanMSE_lambda10")]
    pub mean_mse_lambda10: f64,
    #[serde(rename = "MeanMSE_lambda20")]
    pub mean_mse_lambda20: f64,
    pub mean_acceptance_rate: f64,
    pub failures: Vec<ReplicateFailure>,
    pub replicates: Vec<ReplicateResult>,
}

impl ReplicationReport {
    pub fn get(&self, name: &str) -> Option<&ParamAggregate> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>9} {:>9} {:>8} {:>8} {:>6}",
            "Parameter", "Truth", "Mean", "Abs.bias", "ESD", "SSE", "CP"
        );
        for p in &self.parameters {
            let _ = writeln!(
                out,
                "{:<10} {:>8.4} {:>9.4} {:>9.4} {:>8.4} {:>8.4} {:>6.3}",
                p.name, p.truth, p.mean, p.abs_bias, p.esd, p.sse, p.cp
            );
        }
        let _ = writeln!(out, "MeanMSE lambda10: {:.4}", self.mean_mse_lambda10);
        let _ = writeln!(out, "MeanMSE lambda20: {:.4}", self.mean_mse_lambda20);
        let _ = writeln!(
            out,
            "replicates: {} of {} ({} failed); mean acceptance {:.3}",
            self.completed,
            self.requested,
            self.failures.len(),
            self.mean_acceptance_rate
        );
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyOptions {
    pub seed_policy: SeedPolicy,
}

/// The MCMC settings actually used for a dataset: `adapt_start` is raised to
/// twice the dimension when the realized grid is large.
pub fn effective_mcmc(mcmc: &MCMCConfig, data: &Dataset) -> MCMCConfig {
    let mut m = mcmc.clone();
    m.adapt_start = m.adapt_start.max(2 * data.layout().dim());
    m
}

/// Simulate, fit with the default priors and score one replicate.
pub fn run_replicate(
    scenario: &Scenario,
    mcmc: &MCMCConfig,
    replicate: usize,
    policy: SeedPolicy,
) -> Result<ReplicateResult> {
    let (data_seed, mcmc_seed) = replicate_seeds(policy, scenario.seed, mcmc.seed, replicate);
    let sc = Scenario {
        seed: data_seed,
        ..scenario.clone()
    };
    let data = simulate_dataset(&sc)?;
    let prior = default_priors(&sc, data.grid())?;
    let cfg = MCMCConfig {
        seed: mcmc_seed,
        ..effective_mcmc(mcmc, &data)
    };
    let chain = fit_posterior(&data, &prior, &cfg, 1)?;
    let summary = summarize(&chain, &data)?;
    let truths = [sc.beta11, sc.beta21, sc.psi];
    let mut means = [0.0; 3];
    let mut psds = [0.0; 3];
    let mut covered = [false; 3];
    for (k, name) in ["beta1_1", "beta2_1", "psi"].iter().enumerate() {
        let p = summary
            .get(name)
            .ok_or_else(|| Error::validation(format!("summary lacks {name}")))?;
        means[k] = p.estimate;
        psds[k] = p.psd;
        covered[k] = p.bci.is_some_and(|(lo, hi)| lo <= truths[k] && truths[k] <= hi);
    }
    let pts = mse_points();
    let mut se10 = 0.0;
    let mut se20 = 0.0;
    for &t in &pts {
        se10 += (summary.baseline.lambda10(t)? - sc.lambda10_truth(t)).powi(2);
        se20 += (summary.baseline.lambda20(t)? - sc.lambda20_truth(t)).powi(2);
    }
    Ok(ReplicateResult {
        replicate,
        data_seed,
        mcmc_seed,
        means,
        psds,
        covered,
        mse_lambda10: se10 / pts.len() as f64,
        mse_lambda20: se20 / pts.len() as f64,
        acceptance_rate: chain.acceptance_rate,
    })
}

pub fn replicate_study(scenario: &Scenario, r: usize, mcmc: &MCMCConfig) -> Result<ReplicationReport> {
    replicate_study_with(scenario, r, mcmc, StudyOptions::default())
}

/// Runs `r` replicates in parallel on the current rayon pool and aggregates them.
pub fn replicate_study_with(
    scenario: &Scenario,
    r: usize,
    mcmc: &MCMCConfig,
    options: StudyOptions,
) -> Result<ReplicationReport> {
    if r < 2 {
        return Err(Error::validation("a replication study needs R >= 2"));
    }
    scenario.validate()?;
    let outcomes: Vec<Result<ReplicateResult>> = (0..r)
        .into_par_iter()
        .map(|k| {
            let out = run_replicate(scenario, mcmc, k, options.seed_policy);
            match &out {
                Ok(res) => info!("replicate {k} done (acceptance {:.3})", res.acceptance_rate),
                Err(e) => warn!("replicate {k} failed: {e}"),
            }
            out
        })
        .collect();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for (k, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(res) => replicates.push(res),
            Err(e) => failures.push(ReplicateFailure {
                replicate: k,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * r as f64 || replicates.len() < 2 {
        return Err(Error::numeric(
            "replication",
            format!("{} of {r} replicates failed; first: {}", failures.len(), failures[0].message),
        ));
    }
    Ok(aggregate(scenario, mcmc, options.seed_policy, r, replicates, failures))
}

fn aggregate(
    scenario: &Scenario,
    mcmc: &MCMCConfig,
    seed_policy: SeedPolicy,
    requested: usize,
    replicates: Vec<ReplicateResult>,
    failures: Vec<ReplicateFailure>,
) -> ReplicationReport {
    let completed = replicates.len();
    let mut parameters = Vec::new();
    let names = ["beta11", "beta21", "psi"];
    let truths = [scenario.beta11, scenario.beta21, scenario.psi];
    let n_params = if scenario.psi_truth().is_some() { 3 } else { 2 };
    for k in 0..n_params {
        let means: Vec<f64> = replicates.iter().map(|r| r.means[k]).collect();
        let psds: Vec<f64> = replicates.iter().map(|r| r.psds[k]).collect();
        let (mean, sse) = mean_and_sd(&means);
        let (esd, _) = mean_and_sd(&psds);
        let cp = replicates.iter().filter(|r| r.covered[k]).count() as f64 / completed as f64;
        parameters.push(ParamAggregate {
            name: names[k].to_string(),
            truth: truths[k],
            mean,
            abs_bias: (mean - truths[k]).abs(),
            esd,
            sse,
            cp,
        });
    }
    let avg = |f: fn(&ReplicateResult) -> f64| replicates.iter().map(f).sum::<f64>() / completed as f64;
    ReplicationReport {
        scenario: scenario.clone(),
        mcmc: mcmc.clone(),
        seed_policy,
        requested,
        completed,
        parameters,
        mean_mse_lambda10: avg(|r| r.mse_lambda10),
        mean_mse_lambda20: avg(|r| r.mse_lambda20),
        mean_acceptance_rate: avg(|r| r.acceptance_rate),
        failures,
        replicates,
    }
}
