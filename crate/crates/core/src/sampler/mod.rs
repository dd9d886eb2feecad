//! MAP search, observed-information proposals and the adaptive Metropolis-Hastings chain.

mod mh;
mod optim;

pub use mh::{run_adaptive_mh, run_adaptive_mh_with, HAARIO_SCALE};
pub use optim::{
    finite_difference_gradient, finite_difference_hessian, find_map, find_map_multistart,
    observed_information, MapOptions,
};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{ParamLayout, ParamVector};

/// How many past states feed the empirical proposal covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdaptWindow {
    #[default]
    AllHistory,
    Recent(usize),
}

impl Serialize for AdaptWindow {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AdaptWindow::AllHistory => s.serialize_str("all-history"),
            AdaptWindow::Recent(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for AdaptWindow {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) if n > 0 => Ok(AdaptWindow::Recent(n as usize)),
            Raw::Count(_) => Err(serde::de::Error::custom("adapt_window must be positive")),
            Raw::Name(s) if s == "all-history" => Ok(AdaptWindow::AllHistory),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "adapt_window must be a positive integer or \"all-history\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MCMCConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt_start: usize,
    pub adapt_interval: usize,
    pub adapt_window: AdaptWindow,
    pub proposal_scale: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for MCMCConfig {
    fn default() -> Self {
        MCMCConfig::desk_scale()
    }
}

impl MCMCConfig {
    /// 20,000 iterations, 4,000 burn-in, thinning 10.
    pub fn desk_scale() -> Self {
        MCMCConfig {
            iterations: 20_000,
            burn_in: 4_000,
            thin: 10,
            adapt_start: 1_000,
            adapt_interval: 500,
            adapt_window: AdaptWindow::AllHistory,
            proposal_scale: 1.0,
            jitter: 1e-6,
            seed: 20_240_601,
        }
    }

    /// 100,000 iterations, 10,000 burn-in, thinning 30.
    pub fn paper_scale() -> Self {
        MCMCConfig {
            iterations: 100_000,
            burn_in: 10_000,
            thin: 30,
            ..MCMCConfig::desk_scale()
        }
    }

    pub fn retained(&self) -> usize {
        (self.iterations.saturating_sub(self.burn_in)) / self.thin.max(1)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let fail = |m: String| Err(Error::validation(format!("mcmc config: {m}")));
        if self.iterations == 0 {
            return fail("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return fail(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return fail("thin must be positive".into());
        }
        if self.retained() < 10 {
            return fail(format!(
                "(iterations - burn_in) / thin = {} retained draws, need at least 10",
                self.retained()
            ));
        }
        if self.adapt_interval == 0 {
            return fail("adapt_interval must be positive".into());
        }
        if self.adapt_start < 2 * dim {
            return fail(format!(
                "adapt_start ({}) must be at least twice the parameter dimension ({dim})",
                self.adapt_start
            ));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return fail("proposal_scale must be positive".into());
        }
        if !(self.jitter > 0.0 && self.jitter.is_finite()) {
            return fail("jitter must be positive".into());
        }
        Ok(())
    }
}

/// Independent generator for stream `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Retained posterior draws plus sampler metadata.
#[derive(Debug, Clone)]
pub struct Chain {
    draws: Vec<f64>,
    dim: usize,
    pub labels: Vec<String>,
    pub layout: Option<ParamLayout>,
    pub acceptance_rate: f64,
    pub map_point: Vec<f64>,
    pub proposal_cov_final: DMatrix<f64>,
    pub config: MCMCConfig,
    pub stream: u64,
    pub warnings: Vec<String>,
}

impl Chain {
    /// A chain from already-retained rows; used when reading chains back or in tests.
    pub fn from_rows(rows: Vec<Vec<f64>>, layout: Option<ParamLayout>) -> Result<Self> {
        let dim = match (rows.first(), layout) {
            (_, Some(l)) => l.dim(),
            (Some(r), None) => r.len(),
            (None, None) => return Err(Error::validation("cannot infer dimension of an empty chain")),
        };
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation(format!("every draw must have {dim} entries")));
        }
        let mut chain = Chain::empty(dim, layout, MCMCConfig::default());
        chain.draws = rows.into_iter().flatten().collect();
        if let Some(first) = chain.draws.chunks(dim).next() {
            chain.map_point = first.to_vec();
        }
        Ok(chain)
    }

    pub(crate) fn empty(dim: usize, layout: Option<ParamLayout>, config: MCMCConfig) -> Self {
        let labels = match layout {
            Some(l) => l.labels(),
            None => (1..=dim).map(|j| format!("x{j}")).collect(),
        };
        Chain {
            draws: Vec::new(),
            dim,
            labels,
            layout,
            acceptance_rate: 0.0,
            map_point: vec![0.0; dim],
            proposal_cov_final: DMatrix::identity(dim, dim),
            config,
            stream: 0,
            warnings: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.draws.extend_from_slice(row);
    }

    /// Attaches model block structure (and labels) to a chain from a generic target.
    pub fn with_layout(mut self, layout: ParamLayout) -> Result<Self> {
        if layout.dim() != self.dim {
            return Err(Error::validation(format!(
                "layout dimension {} does not match chain dimension {}",
                layout.dim(),
                self.dim
            )));
        }
        self.labels = layout.labels();
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.draws.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.draws[s * self.dim..(s + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks(self.dim)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn layout_or_err(&self) -> Result<ParamLayout> {
        self.layout
            .ok_or_else(|| Error::validation("chain carries no parameter layout"))
    }

    pub fn param(&self, s: usize) -> Result<ParamVector> {
        ParamVector::from_flat(self.layout_or_err()?, self.row(s))
    }

    pub fn map_params(&self) -> Result<ParamVector> {
        ParamVector::from_flat(self.layout_or_err()?, &self.map_point)
    }
}
