//! Bayesian joint modelling of current status and current count data under a
//! shared gamma frailty.
//!
//! A subject monitored once at time `u` reports whether a terminal event has
//! happened (`delta`) and how many recurrent events have occurred (`n_count`).
//! Both processes share a gamma frailty with mean one and variance `psi`; the
//! frailty integrates out in closed form, so the posterior is explored with an
//! adaptive random-walk Metropolis-Hastings sampler started at the MAP point.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod fit;
pub mod io;
pub mod model;
pub mod priors;
pub mod sampler;
pub mod simulator;
pub mod target;

pub use error::{Error, Result};
pub use model::{Dataset, Grid, Observation, ParamLayout, ParamVector};
pub use priors::{log_posterior, log_prior, Posterior, PriorSpec};
pub use sampler::{Chain, MCMCConfig};
