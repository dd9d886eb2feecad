#![allow(dead_code)]

use statrs::function::gamma::ln_gamma;

/// `Σ_d e^{φ*_d}·(min(v_d, t) − min(v_{d−1}, t))`, written out independently.
pub fn lambda10_direct(phi_star: &[f64], grid: &[f64], t: f64) -> f64 {
    let mut total = 0.0;
    let mut prev = 0.0_f64;
    for (p, &v) in phi_star.iter().zip(grid) {
        total += p.exp() * (v.min(t) - prev.min(t));
        prev = v;
    }
    total
}

/// `Σ_{v_d ≤ t} e^{ν_d}`.
pub fn lambda20_direct(nu: &[f64], grid: &[f64], t: f64) -> f64 {
    nu.iter()
        .zip(grid)
        .filter(|(_, &v)| v <= t)
        .map(|(n, _)| n.exp())
        .sum()
}

fn log_integrand(s: f64, mu: f64, h: f64, n: u64, delta: u8, psi: f64) -> f64 {
    let omega = s.exp();
    let k = 1.0 / psi;
    let log_gamma_density = (k - 1.0) * s - omega / psi - k * psi.ln() - ln_gamma(k);
    let count = n as f64 * (s + mu.ln()) - omega * mu;
    let status = if delta == 0 {
        -omega * h
    } else {
        (-(-omega * h).exp_m1()).ln()
    };
    // dω = ω ds
    count + status + log_gamma_density + s
}

fn trapezoid_log(lo: f64, hi: f64, step: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as usize;
    let h = (hi - lo) / n as f64;
    let vals: Vec<f64> = (0..=n).map(|i| f(lo + i as f64 * h)).collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (i, v) in vals.iter().enumerate() {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * (v - m).exp();
    }
    m + (sum * h).ln()
}

/// `ln ∫ (ωμ)ᴺ e^{−ωμ} · [e^{−ωH}]^{1−δ} [1 − e^{−ωH}]^δ · Gamma(ω; 1/ψ, ψ) dω`
/// by the trapezoid rule in `s = ln ω`, with both step sizes reported.
pub fn log_frailty_integral(mu: f64, h: f64, n: u64, delta: u8, psi: f64) -> (f64, f64) {
    let f = |s: f64| log_integrand(s, mu, h, n, delta, psi);
    let mut best = (f64::NEG_INFINITY, 0.0);
    let mut s = -400.0;
    while s <= 15.0 {
        let v = f(s);
        if v > best.0 {
            best = (v, s);
        }
        s += 0.05;
    }
    let drop = 60.0;
    let mut lo = best.1;
    while f(lo) > best.0 - drop && lo > -2000.0 {
        lo -= 0.5;
    }
    let mut hi = best.1;
    while f(hi) > best.0 - drop && hi < 50.0 {
        hi += 0.05;
    }
    (
        trapezoid_log(lo, hi, 0.01, &f),
        trapezoid_log(lo, hi, 0.005, &f),
    )
}

/// One randomized likelihood configuration with `n′ ≤ 3` and `p = q = 1`.
#[derive(Debug, Clone)]
pub struct OracleCase {
    pub grid: Vec<f64>,
    pub phi_star: Vec<f64>,
    pub nu: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub psi_star: f64,
    pub u: f64,
    pub delta: u8,
    pub n_count: u64,
    pub x1: f64,
    pub x2: f64,
}

impl OracleCase {
    pub fn random<R: rand::Rng>(rng: &mut R) -> Self {
        let n_grid = rng.random_range(1..=3usize);
        let mut grid: Vec<f64> = (0..n_grid).map(|_| rng.random_range(0.1..3.0)).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let d = grid.len();
        let u = grid[rng.random_range(0..d)];
        OracleCase {
            phi_star: (0..d).map(|_| rng.random_range(-1.5..1.5)).collect(),
            nu: (0..d).map(|_| rng.random_range(-1.5..1.0)).collect(),
            grid,
            beta1: rng.random_range(-1.0..1.0),
            beta2: rng.random_range(-1.0..1.0),
            psi_star: rng.random_range(-1.5..1.2),
            u,
            delta: rng.random_range(0..=1u8),
            n_count: rng.random_range(0..=6u64),
            x1: rng.random_range(-1.0..1.0),
            x2: rng.random_range(-1.0..1.0),
        }
    }

    pub fn theta(&self) -> frailjoint::ParamVector {
        frailjoint::ParamVector {
            phi_star: self.phi_star.clone(),
            nu: self.nu.clone(),
            beta1: vec![self.beta1],
            beta2: vec![self.beta2],
            psi_star: self.psi_star,
        }
    }

    pub fn observation(&self) -> frailjoint::Observation {
        frailjoint::Observation {
            u: self.u,
            delta: self.delta,
            n_count: self.n_count,
            x1: vec![self.x1],
            x2: vec![self.x2],
        }
    }

    pub fn grid(&self) -> frailjoint::Grid {
        frailjoint::Grid::new(self.grid.clone()).unwrap()
    }

    /// Quadrature value of the term at the finer step.
    pub fn oracle(&self) -> f64 {
        let mu = lambda10_direct(&self.phi_star, &self.grid, self.u) * (self.beta1 * self.x1).exp();
        let h = lambda20_direct(&self.nu, &self.grid, self.u) * (self.beta2 * self.x2).exp();
        log_frailty_integral(mu, h, self.n_count, self.delta, self.psi_star.exp()).1
    }
}

/// `max |a−b| / |b|` style relative error on the natural scale from two log values.
pub fn rel_err_from_logs(log_a: f64, log_b: f64) -> f64 {
    (log_a - log_b).exp_m1().abs()
}

pub fn unit_dataset() -> frailjoint::Dataset {
    let obs = |delta, n_count| frailjoint::Observation {
        u: 1.0,
        delta,
        n_count,
        x1: vec![0.0],
        x2: vec![0.0],
    };
    frailjoint::Dataset::new(
        vec![obs(0, 0), obs(1, 0), obs(0, 1)],
        frailjoint::Grid::new(vec![1.0]).unwrap(),
        1,
        1,
    )
    .unwrap()
}
