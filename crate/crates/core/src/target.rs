/// An unnormalized log density over flat parameter vectors.
///
/// Implementations must be side-effect free; the sampler and optimizer treat
/// any non-finite return value as "outside the support".
pub trait LogDensity: Sync {
    fn log_density(&self, x: &[f64]) -> f64;
}

impl<F> LogDensity for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn log_density(&self, x: &[f64]) -> f64 {
        self(x)
    }
}
