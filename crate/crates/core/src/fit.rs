//! MAP search followed by the adaptive sampler on the model posterior.

use log::info;

use crate::error::Result;
use crate::model::Dataset;
use crate::priors::{Posterior, PriorSpec};
use crate::target::LogDensity;
use crate::sampler::{find_map_multistart, run_adaptive_mh_with, Chain, MCMCConfig, MapOptions};

/// Fits one chain. Optimization starts from the prior mean and from zero.
pub fn fit_posterior(
    data: &Dataset,
    prior: &PriorSpec,
    mcmc: &MCMCConfig,
    stream: u64,
) -> Result<Chain> {
    let layout = data.layout();
    prior.check_against(layout)?;
    mcmc.validate(layout.dim())?;
    let post = Posterior::new(data, prior)?;
    let starts = vec![prior.mean_point().to_flat(), vec![0.0; layout.dim()]];
    let map = find_map_multistart(&post, &starts, MapOptions::default())?;
    info!("MAP found; log posterior {:.4}", post.log_density(&map));
    run_adaptive_mh_with(&post, mcmc, &map, Some(layout), None, stream)
}
