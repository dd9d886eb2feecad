//! C ABI over `frailjoint`.
//!
//! Objects are opaque heap handles released with the matching `*_free`. Every
//! fallible call returns an [`FjStatus`]; on failure the message is available
//! from [`fj_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use frailjoint::fit::fit_posterior;
use frailjoint::io::read_dataset;
use frailjoint::model::log_likelihood;
use frailjoint::sampler::AdaptWindow;
use frailjoint::{Chain, Dataset, Error, MCMCConfig, Observation, ParamVector, PriorSpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FjStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Numeric = 3,
    Io = 4,
    Panic = 5,
}

pub struct FjDataset {
    inner: Dataset,
}

pub struct FjPriorSpec {
    inner: PriorSpec,
}

pub struct FjChain {
    inner: Chain,
}

/// Sampler settings; `adapt_window == 0` means all history.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FjMcmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub adapt_start: usize,
    pub adapt_interval: usize,
    pub adapt_window: usize,
    pub proposal_scale: f64,
    pub jitter: f64,
    pub seed: u64,
}

impl From<&MCMCConfig> for FjMcmcConfig {
    fn from(c: &MCMCConfig) -> Self {
        FjMcmcConfig {
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            adapt_start: c.adapt_start,
            adapt_interval: c.adapt_interval,
            adapt_window: match c.adapt_window {
                AdaptWindow::AllHistory => 0,
                AdaptWindow::Recent(n) => n,
            },
            proposal_scale: c.proposal_scale,
            jitter: c.jitter,
            seed: c.seed,
        }
    }
}

impl From<&FjMcmcConfig> for MCMCConfig {
    fn from(c: &FjMcmcConfig) -> Self {
        MCMCConfig {
            iterations: c.iterations,
            burn_in: c.burn_in,
            thin: c.thin,
            adapt_start: c.adapt_start,
            adapt_interval: c.adapt_interval,
            adapt_window: match c.adapt_window {
                0 => AdaptWindow::AllHistory,
                n => AdaptWindow::Recent(n),
            },
            proposal_scale: c.proposal_scale,
            jitter: c.jitter,
            seed: c.seed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FjStatus {
    match e {
        Error::Io { .. } => FjStatus::Io,
        _ if e.is_numeric() => FjStatus::Numeric,
        _ => FjStatus::Validation,
    }
}

enum Failure {
    Null(&'static str),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FjStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            FjStatus::NullPointer
        }
        Ok(Err(Failure::Model(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            FjStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn out_ptr<T>(out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn fj_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a dataset CSV; the grid is the sorted distinct monitoring times.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fj_dataset_from_csv(path: *const c_char, out: *mut *mut FjDataset) -> FjStatus {
    guard(|| {
        out_ptr(out)?;
        let path = deref(path, "path")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Validation("path is not UTF-8".into()))?;
        let inner = read_dataset(Path::new(path), None, None)?;
        *out = Box::into_raw(Box::new(FjDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from column arrays; `x1` is `n × p` and `x2` is `n × q`, row-major.
///
/// # Safety
/// Each array must hold the stated number of elements and `out` must be valid.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn fj_dataset_from_arrays(
    n: usize,
    p: usize,
    q: usize,
    u: *const f64,
    delta: *const u8,
    n_count: *const u64,
    x1: *const f64,
    x2: *const f64,
    out: *mut *mut FjDataset,
) -> FjStatus {
    guard(|| {
        out_ptr(out)?;
        let u = slice(u, n, "u")?;
        let delta = slice(delta, n, "delta")?;
        let n_count = slice(n_count, n, "n_count")?;
        let x1 = slice(x1, n * p, "x1")?;
        let x2 = slice(x2, n * q, "x2")?;
        let observations = (0..n)
            .map(|i| Observation {
                u: u[i],
                delta: delta[i],
                n_count: n_count[i],
                x1: x1[i * p..(i + 1) * p].to_vec(),
                x2: x2[i * q..(i + 1) * q].to_vec(),
            })
            .collect();
        let inner = Dataset::with_inferred_grid(observations, p, q)?;
        *out = Box::into_raw(Box::new(FjDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `data` must come from a dataset constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fj_dataset_free(data: *mut FjDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fj_dataset_len(data: *const FjDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.len())
}

/// Working-scale parameter dimension `2n′ + p + q + 1`, or 0 for a null handle.
///
/// # Safety
/// `data` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fj_dataset_dim(data: *const FjDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.layout().dim())
}

/// # Safety
/// `theta` must hold `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fj_log_likelihood(
    data: *const FjDataset,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> FjStatus {
    guard(|| {
        let data = &deref(data, "data")?.inner;
        let theta = ParamVector::from_flat(data.layout(), slice(theta, len, "theta")?)?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = log_likelihood(&theta, data)?;
        Ok(())
    })
}

/// Independent N(0, 100) priors matching the dataset dimensions.
///
/// # Safety
/// `data` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fj_prior_default(data: *const FjDataset, out: *mut *mut FjPriorSpec) -> FjStatus {
    guard(|| {
        out_ptr(out)?;
        let data = &deref(data, "data")?.inner;
        *out = Box::into_raw(Box::new(FjPriorSpec {
            inner: PriorSpec::vague(data.layout()),
        }));
        Ok(())
    })
}

/// Reads a TOML prior file validated against the dataset.
///
/// # Safety
/// `path` must be NUL-terminated, `data` a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn fj_prior_from_toml(
    path: *const c_char,
    data: *const FjDataset,
    out: *mut *mut FjPriorSpec,
) -> FjStatus {
    guard(|| {
        out_ptr(out)?;
        let data = &deref(data, "data")?.inner;
        let path = CStr::from_ptr(deref(path, "path")?)
            .to_str()
            .map_err(|_| Error::Validation("path is not UTF-8".into()))?;
        let inner = PriorSpec::from_toml_file(Path::new(path), data.layout())?;
        *out = Box::into_raw(Box::new(FjPriorSpec { inner }));
        Ok(())
    })
}

/// # Safety
/// `prior` must come from a prior constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fj_prior_free(prior: *mut FjPriorSpec) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// # Safety
/// Handles must be live, `theta` must hold `len` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fj_log_posterior(
    data: *const FjDataset,
    prior: *const FjPriorSpec,
    theta: *const f64,
    len: usize,
    out: *mut f64,
) -> FjStatus {
    guard(|| {
        let data = &deref(data, "data")?.inner;
        let prior = &deref(prior, "prior")?.inner;
        let theta = ParamVector::from_flat(data.layout(), slice(theta, len, "theta")?)?;
        let out = out.as_mut().ok_or(Failure::Null("out"))?;
        *out = frailjoint::log_posterior(&theta, data, prior)?;
        Ok(())
    })
}

/// 20,000 iterations, 4,000 burn-in, thinning 10.
#[no_mangle]
pub extern "C" fn fj_mcmc_desk_scale() -> FjMcmcConfig {
    FjMcmcConfig::from(&MCMCConfig::desk_scale())
}

/// MAP search followed by the adaptive sampler.
///
/// # Safety
/// Handles and `config` must be valid; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fj_fit(
    data: *const FjDataset,
    prior: *const FjPriorSpec,
    config: *const FjMcmcConfig,
    out: *mut *mut FjChain,
) -> FjStatus {
    guard(|| {
        out_ptr(out)?;
        let data = &deref(data, "data")?.inner;
        let prior = &deref(prior, "prior")?.inner;
        let config = MCMCConfig::from(deref(config, "config")?);
        let inner = fit_posterior(data, prior, &config, 0)?;
        *out = Box::into_raw(Box::new(FjChain { inner }));
        Ok(())
    })
}

/// Retained draws, or 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fj_chain_rows(chain: *const FjChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.len())
}

/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fj_chain_dim(chain: *const FjChain) -> usize {
    chain.as_ref().map_or(0, |c| c.inner.dim())
}

/// Post-burn-in acceptance rate, or NaN for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fj_chain_acceptance_rate(chain: *const FjChain) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.inner.acceptance_rate)
}

/// Copies the draws row-major into `buf`, which must hold `rows × dim` values.
///
/// # Safety
/// `buf` must be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn fj_chain_copy_draws(chain: *const FjChain, buf: *mut f64, len: usize) -> FjStatus {
    guard(|| {
        let chain = &deref(chain, "chain")?.inner;
        let need = chain.len() * chain.dim();
        if len < need {
            return Err(Error::Validation(format!("buffer holds {len} values, need {need}")).into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (s, row) in chain.rows().enumerate() {
            dst[s * chain.dim()..(s + 1) * chain.dim()].copy_from_slice(row);
        }
        Ok(())
    })
}

/// # Safety
/// `chain` must come from [`fj_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fj_chain_free(chain: *mut FjChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}
