use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::target::LogDensity;

const GRADIENT_REL_STEP: f64 = 1e-5;
const HESSIAN_REL_STEP: f64 = 1e-4;
const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

fn step(x: f64, rel: f64) -> f64 {
    rel.max(rel * x.abs())
}

/// Central-difference gradient with step `max(1e-5, 1e-5·|x_k|)`.
pub fn finite_difference_gradient<T: LogDensity + ?Sized>(target: &T, x: &[f64]) -> Vec<f64> {
    let mut buf = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = step(x[k], GRADIENT_REL_STEP);
            buf[k] = x[k] + h;
            let up = target.log_density(&buf);
            buf[k] = x[k] - h;
            let down = target.log_density(&buf);
            buf[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian, evaluated in parallel over entries.
pub fn finite_difference_hessian<T: LogDensity + ?Sized>(target: &T, x: &[f64]) -> DMatrix<f64> {
    let d = x.len();
    let f0 = target.log_density(x);
    let h: Vec<f64> = x.iter().map(|&v| step(v, HESSIAN_REL_STEP)).collect();
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let mut buf = x.to_vec();
            let mut eval = |di: f64, dj: f64| {
                buf.copy_from_slice(x);
                buf[i] += di;
                buf[j] += dj;
                target.log_density(&buf)
            };
            if i == j {
                (eval(h[i], 0.0) - 2.0 * f0 + eval(-h[i], 0.0)) / (h[i] * h[i])
            } else {
                (eval(h[i], h[j]) - eval(h[i], -h[j]) - eval(-h[i], h[j]) + eval(-h[i], -h[j]))
                    / (4.0 * h[i] * h[j])
            }
        })
        .collect();
    let mut m = DMatrix::zeros(d, d);
    for (&(i, j), v) in pairs.iter().zip(values) {
        m[(i, j)] = v;
        m[(j, i)] = v;
    }
    m
}

/// Inverse of the negated Hessian at `at`, with the precision eigenvalues floored at `jitter`.
pub fn observed_information<T: LogDensity + ?Sized>(
    target: &T,
    at: &[f64],
    jitter: f64,
) -> Result<DMatrix<f64>> {
    let hess = finite_difference_hessian(target, at);
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("hessian", "non-finite second difference"));
    }
    let neg = -(&hess + hess.transpose()) * 0.5;
    let eig = neg.symmetric_eigen();
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(jitter));
    let v = &eig.eigenvectors;
    let cov = v * DMatrix::from_diagonal(&inv_vals) * v.transpose();
    Ok((&cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct MapOptions {
    pub max_iterations: usize,
    /// Stop once `‖∇‖ ≤ gradient_tol·(1 + |f|)`.
    pub gradient_tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            max_iterations: 1_000,
            gradient_tol: 1e-7,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// BFGS ascent with Armijo backtracking on the finite-difference gradient.
pub fn find_map<T: LogDensity + ?Sized>(
    target: &T,
    init: &[f64],
    options: MapOptions,
) -> Result<Vec<f64>> {
    let d = init.len();
    let mut x = init.to_vec();
    let mut f = target.log_density(&x);
    if !f.is_finite() {
        return Err(Error::numeric("target", "log density is not finite at the initial point"));
    }
    // Minimize F = -f; gradients below are of F.
    let mut g: Vec<f64> = finite_difference_gradient(target, &x).iter().map(|v| -v).collect();
    let mut h_inv = DMatrix::<f64>::identity(d, d);
    let mut fresh = true;

    for iteration in 0..options.max_iterations {
        if norm(&g) <= options.gradient_tol * (1.0 + f.abs()) {
            break;
        }
        let gv = DVector::from_column_slice(&g);
        let mut p = -(&h_inv * &gv);
        let mut slope = p.dot(&gv);
        if !(slope < 0.0) {
            h_inv.fill_with_identity();
            fresh = true;
            p = -gv.clone();
            slope = p.dot(&gv);
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        let mut saw_non_finite = false;
        let mut trial = vec![0.0; d];
        for _ in 0..MAX_HALVINGS {
            for k in 0..d {
                trial[k] = x[k] + alpha * p[k];
            }
            let ft = target.log_density(&trial);
            if !ft.is_finite() {
                saw_non_finite = true;
            } else if -ft <= -f + ARMIJO_C1 * alpha * slope {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }

        let Some(f_new) = accepted else {
            if !fresh {
                h_inv.fill_with_identity();
                fresh = true;
                continue;
            }
            if saw_non_finite && norm(&g) > 1e-4 * (1.0 + f.abs()) {
                return Err(Error::Optimizer {
                    iterations: iteration,
                    last_good: x,
                });
            }
            break;
        };

        let g_new: Vec<f64> = finite_difference_gradient(target, &trial)
            .iter()
            .map(|v| -v)
            .collect();
        let s = DVector::from_iterator(d, trial.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(d, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                h_inv *= sy / y.dot(&y);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(s yᵀH + H y sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x.copy_from_slice(&trial);
        f = f_new;
        g = g_new;
    }
    Ok(x)
}

/// Runs [`find_map`] from each start and keeps the highest finite optimum.
pub fn find_map_multistart<T: LogDensity + ?Sized>(
    target: &T,
    starts: &[Vec<f64>],
    options: MapOptions,
) -> Result<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut last_err = None;
    for start in starts {
        match find_map(target, start, options) {
            Ok(x) => {
                let f = target.log_density(&x);
                if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                    best = Some((f, x));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some((_, x)), _) => Ok(x),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::validation("no starting points given")),
    }
}
