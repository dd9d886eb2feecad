//! Block-wise multivariate normal prior and the unnormalized log posterior.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_likelihood, Dataset, ParamLayout, ParamVector};
use crate::target::LogDensity;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Vague prior variance used for any block the user leaves unspecified.
pub const DEFAULT_PRIOR_VARIANCE: f64 = 100.0;

/// AR(1) correlation matrix with entries `rho^|i−j|`.
pub fn ar1_correlation(n_prime: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::domain(format!("AR(1) correlation must lie in (0,1), got {rho}")));
    }
    if n_prime == 0 {
        return Err(Error::domain("AR(1) dimension must be at least 1"));
    }
    Ok(DMatrix::from_fn(n_prime, n_prime, |i, j| {
        rho.powi(i.abs_diff(j) as i32)
    }))
}

/// A multivariate normal block with its Cholesky factor cached.
#[derive(Debug, Clone)]
pub struct GaussianBlock {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol_lower: DMatrix<f64>,
    log_det: f64,
}

impl GaussianBlock {
    pub fn new(name: &str, mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::validation(format!(
                "{name}: covariance is {}x{}, mean has length {d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("{name}: non-finite hyperparameter")));
        }
        let asym = (&cov - cov.transpose()).amax();
        if asym > 1e-12 * cov.amax().max(1.0) {
            return Err(Error::validation(format!("{name}: covariance is not symmetric")));
        }
        let chol = cov.clone().cholesky().ok_or_else(|| {
            Error::numeric(name, "covariance is not positive definite (Cholesky failed)")
        })?;
        let chol_lower = chol.l();
        let log_det = 2.0 * chol_lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianBlock {
            mean: DVector::from_vec(mean),
            cov,
            chol_lower,
            log_det,
        })
    }

    pub fn diagonal(name: &str, mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        if variances.len() != mean.len() {
            return Err(Error::validation(format!(
                "{name}: {} variances for {} means",
                variances.len(),
                mean.len()
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::validation(format!("{name}: variances must be positive")));
        }
        GaussianBlock::new(name, mean, DMatrix::from_diagonal(&DVector::from_row_slice(variances)))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.cov[(i, j)] == 0.0))
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(
            self.dim(),
            x.iter().zip(self.mean.iter()).map(|(a, m)| a - m),
        );
        let z = self
            .chol_lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det + z.norm_squared())
    }
}

/// Independent normal priors on `φ*`, `ν`, `β₁`, `β₂` and `ψ*`.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    pub phi_star: GaussianBlock,
    pub nu: GaussianBlock,
    pub beta1: GaussianBlock,
    pub beta2: GaussianBlock,
    pub psi_star: GaussianBlock,
}

impl PriorSpec {
    /// φ*, β₁ and β₂ must have diagonal covariances; ν may be dense.
    pub fn new(
        phi_star: GaussianBlock,
        nu: GaussianBlock,
        beta1: GaussianBlock,
        beta2: GaussianBlock,
        psi_star: GaussianBlock,
    ) -> Result<Self> {
        for (name, b) in [("phi_star", &phi_star), ("beta1", &beta1), ("beta2", &beta2)] {
            if !b.is_diagonal() {
                return Err(Error::validation(format!("{name}: prior covariance must be diagonal")));
            }
        }
        if phi_star.dim() != nu.dim() {
            return Err(Error::validation("phi_star and nu priors differ in length"));
        }
        if psi_star.dim() != 1 {
            return Err(Error::validation("psi_star prior must be scalar"));
        }
        Ok(PriorSpec {
            phi_star,
            nu,
            beta1,
            beta2,
            psi_star,
        })
    }

    /// N(0, 10²) on every scalar component, independent.
    pub fn vague(layout: ParamLayout) -> Self {
        let block = |name: &str, d: usize| {
            GaussianBlock::diagonal(name, vec![0.0; d], &vec![DEFAULT_PRIOR_VARIANCE; d])
                .expect("vague prior is valid")
        };
        PriorSpec {
            phi_star: block("phi_star", layout.n_grid),
            nu: block("nu", layout.n_grid),
            beta1: block("beta1", layout.p),
            beta2: block("beta2", layout.q),
            psi_star: block("psi_star", 1),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            n_grid: self.phi_star.dim(),
            p: self.beta1.dim(),
            q: self.beta2.dim(),
        }
    }

    pub fn check_against(&self, layout: ParamLayout) -> Result<()> {
        if self.layout() != layout {
            let l = self.layout();
            return Err(Error::validation(format!(
                "prior dimensions (n'={}, p={}, q={}) do not match dataset (n'={}, p={}, q={})",
                l.n_grid, l.p, l.q, layout.n_grid, layout.p, layout.q
            )));
        }
        Ok(())
    }

    /// Prior means assembled into a parameter vector.
    pub fn mean_point(&self) -> ParamVector {
        ParamVector {
            phi_star: self.phi_star.mean().to_vec(),
            nu: self.nu.mean().to_vec(),
            beta1: self.beta1.mean().to_vec(),
            beta2: self.beta2.mean().to_vec(),
            psi_star: self.psi_star.mean()[0],
        }
    }

    /// Reads the TOML prior file and validates it against `layout`.
    pub fn from_toml_file(path: &Path, layout: ParamLayout) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: PriorFile = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        file.build(layout)
    }
}

pub fn log_prior(theta: &ParamVector, spec: &PriorSpec) -> Result<f64> {
    spec.check_against(theta.layout())?;
    Ok(spec.phi_star.log_density(&theta.phi_star)
        + spec.nu.log_density(&theta.nu)
        + spec.beta1.log_density(&theta.beta1)
        + spec.beta2.log_density(&theta.beta2)
        + spec.psi_star.log_density(std::slice::from_ref(&theta.psi_star)))
}

/// Unnormalized log posterior: log-likelihood plus log prior.
pub fn log_posterior(theta: &ParamVector, data: &Dataset, spec: &PriorSpec) -> Result<f64> {
    Ok(log_likelihood(theta, data)? + log_prior(theta, spec)?)
}

/// The posterior as a [`LogDensity`] over flat vectors; failures map to `-inf`.
#[derive(Debug, Clone, Copy)]
pub struct Posterior<'a> {
    pub data: &'a Dataset,
    pub prior: &'a PriorSpec,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a Dataset, prior: &'a PriorSpec) -> Result<Self> {
        prior.check_against(data.layout())?;
        Ok(Posterior { data, prior })
    }

    pub fn layout(&self) -> ParamLayout {
        self.data.layout()
    }

    pub fn evaluate(&self, theta: &ParamVector) -> Result<f64> {
        log_posterior(theta, self.data, self.prior)
    }
}

impl LogDensity for Posterior<'_> {
    fn log_density(&self, x: &[f64]) -> f64 {
        ParamVector::from_flat(self.layout(), x)
            .and_then(|theta| self.evaluate(&theta))
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// A scalar broadcast to every component, or an explicit vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, name: &str, field: &str, d: usize) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; d]),
            ScalarOrVec::Vector(v) if v.len() == d => Ok(v.clone()),
            ScalarOrVec::Vector(v) => Err(Error::validation(format!(
                "{name}.{field} has {} entries, expected {d}",
                v.len()
            ))),
        }
    }
}

/// One block of the prior file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockFile {
    pub mean: Option<ScalarOrVec>,
    pub variance: Option<ScalarOrVec>,
    /// AR(1) correlation, scaled by `variance` (ν block only).
    pub rho: Option<f64>,
    /// Explicit covariance matrix (ν block only).
    pub covariance: Option<Vec<Vec<f64>>>,
}

/// On-disk prior specification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorFile {
    #[serde(default)]
    pub phi_star: BlockFile,
    #[serde(default)]
    pub nu: BlockFile,
    #[serde(default)]
    pub beta1: BlockFile,
    #[serde(default)]
    pub beta2: BlockFile,
    #[serde(default)]
    pub psi_star: BlockFile,
}

impl BlockFile {
    fn mean_and_var(&self, name: &str, d: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mean = match &self.mean {
            Some(m) => m.expand(name, "mean", d)?,
            None => vec![0.0; d],
        };
        let var = match &self.variance {
            Some(v) => v.expand(name, "variance", d)?,
            None => vec![DEFAULT_PRIOR_VARIANCE; d],
        };
        Ok((mean, var))
    }

    fn build_diagonal(&self, name: &str, d: usize) -> Result<GaussianBlock> {
        if self.rho.is_some() || self.covariance.is_some() {
            return Err(Error::validation(format!(
                "{name}: only the nu block accepts rho or covariance"
            )));
        }
        let (mean, var) = self.mean_and_var(name, d)?;
        GaussianBlock::diagonal(name, mean, &var)
    }

    fn build_nu(&self, d: usize) -> Result<GaussianBlock> {
        let (mean, var) = self.mean_and_var("nu", d)?;
        match (&self.rho, &self.covariance) {
            (Some(_), Some(_)) => Err(Error::validation("nu: give either rho or covariance, not both")),
            (Some(rho), None) => GaussianBlock::new("nu", mean, scaled_ar1(d, *rho, &var)?),
            (None, Some(rows)) => {
                if self.variance.is_some() {
                    return Err(Error::validation("nu: variance cannot be combined with covariance"));
                }
                if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::validation(format!("nu: covariance must be {d}x{d}")));
                }
                GaussianBlock::new("nu", mean, DMatrix::from_fn(d, d, |i, j| rows[i][j]))
            }
            (None, None) => GaussianBlock::diagonal("nu", mean, &var),
        }
    }
}

/// `D^{1/2} Σ(ρ) D^{1/2}` with `D = diag(variances)`.
pub fn scaled_ar1(d: usize, rho: f64, variances: &[f64]) -> Result<DMatrix<f64>> {
    if variances.len() != d || variances.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::validation("AR(1) variances must be positive, one per component"));
    }
    let corr = ar1_correlation(d, rho)?;
    let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    Ok(DMatrix::from_fn(d, d, |i, j| corr[(i, j)] * sd[i] * sd[j]))
}

impl PriorFile {
    pub fn build(&self, layout: ParamLayout) -> Result<PriorSpec> {
        let psi = self.psi_star.build_diagonal("psi_star", 1)?;
        PriorSpec::new(
            self.phi_star.build_diagonal("phi_star", layout.n_grid)?,
            self.nu.build_nu(layout.n_grid)?,
            self.beta1.build_diagonal("beta1", layout.p)?,
            self.beta2.build_diagonal("beta2", layout.q)?,
            psi,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_spec() -> PriorSpec {
        let b = |n: &str| GaussianBlock::diagonal(n, vec![0.0], &[1.0]).unwrap();
        PriorSpec::new(b("phi_star"), b("nu"), b("beta1"), b("beta2"), b("psi_star")).unwrap()
    }

    #[test]
    fn ar1_entries() {
        let m = ar1_correlation(3, 0.2).unwrap();
        assert_relative_eq!(m[(0, 2)], 0.04, epsilon = 1e-15);
        assert_eq!(m[(1, 1)], 1.0);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        let near_id = ar1_correlation(4, 1e-12).unwrap();
        assert!((near_id - DMatrix::<f64>::identity(4, 4)).amax() <= 1e-11);
        assert!(ar1_correlation(3, 0.0).is_err());
        assert!(ar1_correlation(3, 1.0).is_err());
    }

    #[test]
    fn ar1_is_positive_definite() {
        let m = ar1_correlation(10, 0.2).unwrap();
        let eig = m.symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        for n in [1, 7, 50, 200] {
            for k in 1..=9 {
                let rho = k as f64 / 10.0;
                assert!(ar1_correlation(n, rho).unwrap().cholesky().is_some(), "{n} {rho}");
            }
        }
    }

    #[test]
    fn standard_normal_blocks_at_mean() {
        let spec = unit_spec();
        let theta = spec.mean_point();
        assert_relative_eq!(log_prior(&theta, &spec).unwrap(), -2.5 * LN_2PI, epsilon = 1e-12);
        let mut shifted = theta.clone();
        shifted.beta1[0] += 1.0;
        let drop = log_prior(&theta, &spec).unwrap() - log_prior(&shifted, &spec).unwrap();
        assert_relative_eq!(drop, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dense_block_matches_explicit_inverse() {
        let d = 6;
        let cov = scaled_ar1(d, 0.2, &[1.0, 2.0, 0.5, 3.0, 1.5, 1.0]).unwrap();
        let mean: Vec<f64> = (0..d).map(|i| i as f64 * 0.3 - 1.0).collect();
        let block = GaussianBlock::new("nu", mean.clone(), cov.clone()).unwrap();
        let x: Vec<f64> = (0..d).map(|i| (i as f64).sin()).collect();
        let diff = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, b)| a - b));
        let inv = cov.clone().try_inverse().unwrap();
        let quad = (diff.transpose() * inv * &diff)[(0, 0)];
        let naive = -0.5 * (d as f64 * LN_2PI + cov.determinant().ln() + quad);
        assert_relative_eq!(block.log_density(&x), naive, max_relative = 1e-10);
    }

    #[test]
    fn rejects_non_diagonal_beta_and_singular_cov() {
        let dense = GaussianBlock::new("beta1", vec![0.0, 0.0], ar1_correlation(2, 0.5).unwrap())
            .unwrap();
        let b = |n: &str| GaussianBlock::diagonal(n, vec![0.0], &[1.0]).unwrap();
        assert!(PriorSpec::new(b("phi_star"), b("nu"), dense, b("beta2"), b("psi_star")).is_err());
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            GaussianBlock::new("nu", vec![0.0, 0.0], singular),
            Err(Error::Numeric { .. })
        ));
    }

    #[test]
    fn prior_file_roundtrip() {
        let text = r#"
            [nu]
            mean = [-2.0, -1.5, -1.0]
            variance = 2.0
            rho = 0.2
            [beta1]
            mean = 1.0
            variance = 100.0
            [psi_star]
            mean = 1.0
            variance = 100.0
        "#;
        let file: PriorFile = toml::from_str(text).unwrap();
        let layout = ParamLayout { n_grid: 3, p: 1, q: 2 };
        let spec = file.build(layout).unwrap();
        assert_eq!(spec.layout(), layout);
        assert_relative_eq!(spec.nu.cov()[(0, 1)], 0.4, epsilon = 1e-15);
        assert_eq!(spec.beta2.mean(), &[0.0, 0.0]);
        assert_eq!(spec.phi_star.cov()[(2, 2)], DEFAULT_PRIOR_VARIANCE);

        let bad: PriorFile = toml::from_str("[nu]\nmean = [1.0, 2.0]").unwrap();
        assert!(bad.build(layout).is_err());
        assert!(toml::from_str::<PriorFile>("[gamma]\nmean = 1.0").is_err());
    }
}
