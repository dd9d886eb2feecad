//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::{rel_err_from_logs, unit_dataset, OracleCase};
use frailjoint::diagnostics::{
    convergence_report, cpo_from_terms, ess_and_acf, gelman_rubin, influence_report, kl_from_terms,
    KL_THRESHOLD,
};
use frailjoint::fit::fit_posterior;
use frailjoint::model::{log_likelihood_term, log_likelihood_terms};
use frailjoint::priors::{scaled_ar1, GaussianBlock};
use frailjoint::sampler::{find_map, observed_information, run_adaptive_mh, run_adaptive_mh_with, MapOptions};
use frailjoint::simulator::{default_priors, replicate_study, simulate_dataset, Frailty, ReplicationReport, Scenario};
use frailjoint::{log_prior, Chain, Dataset, MCMCConfig, ParamLayout, ParamVector, Posterior, PriorSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn likelihood_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let cases = 40;
    for _ in 0..cases {
        let c = OracleCase::random(&mut rng);
        let term = log_likelihood_term(&c.theta(), &c.observation(), &c.grid()).map_err(|e| e.to_string())?;
        let err = rel_err_from_logs(term, c.oracle());
        check(err <= 1e-6, format!("relative error {err:e} for {c:?}"))?;
        worst = worst.max(err);
    }
    Ok(format!("{cases} configurations, max relative error {worst:.2e}"))
}

fn closed_form_values() -> Outcome {
    let data = unit_dataset();
    let terms = log_likelihood_terms(&ParamVector::zeros(data.layout()), &data).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (t, want) in terms.iter().zip([1.0 / 3.0, 1.0 / 6.0, 1.0 / 9.0]) {
        let err = (t.exp() - want).abs();
        check(err <= 1e-12, format!("got {} want {want}", t.exp()))?;
        worst = worst.max(err);
    }
    Ok(format!("1/3, 1/6, 1/9 within {worst:.1e}"))
}

fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let m = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    &m * m.transpose() + DMatrix::identity(d, d) * 0.5
}

fn hessian_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for trial in 0..10 {
        let d = 1 + trial % 6;
        let a = random_spd(d, &mut rng);
        let centre: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let a_target = a.clone();
        let c = centre.clone();
        let target = move |x: &[f64]| {
            let v = DMatrix::from_fn(d, 1, |i, _| x[i] - c[i]);
            -0.5 * (v.transpose() * &a_target * &v)[(0, 0)]
        };
        let cov = observed_information(&target, &centre, 1e-12).map_err(|e| e.to_string())?;
        let inv = a.try_inverse().ok_or("singular test matrix")?;
        let err = (&cov - &inv).abs().max();
        check(err <= 1e-4, format!("dimension {d}: max entry error {err:e}"))?;
        worst = worst.max(err);
    }
    let sigma2: f64 = 2.7;
    let target = |x: &[f64]| -0.5 * (x[0] - 1.0).powi(2) / sigma2;
    let map = find_map(&target, &[-3.0], MapOptions::default()).map_err(|e| e.to_string())?;
    let got = observed_information(&target, &map, 1e-12).map_err(|e| e.to_string())?[(0, 0)];
    check((got - sigma2).abs() <= 1e-4, format!("1-D variance {got} vs {sigma2}"))?;
    Ok(format!("10 quadratics, max entry error {worst:.1e}; 1-D variance {got:.6}"))
}

fn column_moments(chain: &Chain, j: usize) -> (f64, f64, f64) {
    let col = chain.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ess = ess_and_acf(&col, 200).map(|e| e.ess).unwrap_or(n);
    (mean, var, ess)
}

fn calibrated(chain: &Chain, means: &[f64], vars: &[f64], label: &str) -> Result<(), String> {
    for j in 0..means.len() {
        let (m, v, ess) = column_moments(chain, j);
        let se = (vars[j] / ess).sqrt();
        check(
            (m - means[j]).abs() <= 3.0 * se,
            format!("{label} component {j}: mean {m:.4} vs {:.4} (3 SE = {:.4})", means[j], 3.0 * se),
        )?;
        check(
            (v / vars[j] - 1.0).abs() <= 0.10,
            format!("{label} component {j}: variance {v:.4} vs {:.4}", vars[j]),
        )?;
    }
    Ok(())
}

fn sampler_calibration() -> Outcome {
    let layout = ParamLayout { n_grid: 3, p: 1, q: 1 };
    let prior = PriorSpec::new(
        GaussianBlock::diagonal("phi_star", vec![-0.5, 0.2, 0.4], &[0.5, 1.0, 2.0]).map_err(|e| e.to_string())?,
        GaussianBlock::new("nu", vec![0.1, -0.3, 0.0], scaled_ar1(3, 0.2, &[1.0, 1.0, 1.0]).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?,
        GaussianBlock::diagonal("beta1", vec![1.0], &[1.5]).map_err(|e| e.to_string())?,
        GaussianBlock::diagonal("beta2", vec![-1.0], &[0.8]).map_err(|e| e.to_string())?,
        GaussianBlock::diagonal("psi_star", vec![0.0], &[0.3]).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let flat_likelihood = |x: &[f64]| match ParamVector::from_flat(layout, x) {
        Ok(theta) => log_prior(&theta, &prior).unwrap_or(f64::NEG_INFINITY),
        Err(_) => f64::NEG_INFINITY,
    };
    let cfg = MCMCConfig {
        iterations: 300_000,
        burn_in: 20_000,
        thin: 10,
        seed: 99,
        ..MCMCConfig::desk_scale()
    };
    let init = prior.mean_point().to_flat();
    let a = run_adaptive_mh(&flat_likelihood, &cfg, &init, Some(layout)).map_err(|e| e.to_string())?;
    let means = init.clone();
    let vars = [0.5, 1.0, 2.0, 1.0, 1.0, 1.0, 1.5, 0.8, 0.3];
    calibrated(&a, &means, &vars, "prior-only")?;
    let again = run_adaptive_mh(&flat_likelihood, &cfg, &init, Some(layout)).map_err(|e| e.to_string())?;
    check(
        a.rows().zip(again.rows()).all(|(x, y)| x == y),
        "prior-only rerun differs",
    )?;

    let d = 4;
    let cov = scaled_ar1(d, 0.6, &[1.0, 2.0, 0.5, 4.0]).map_err(|e| e.to_string())?;
    let precision = cov.clone().try_inverse().ok_or("singular target covariance")?;
    let mu = [1.0, -2.0, 0.5, 3.0];
    let mvn = move |x: &[f64]| {
        let v = DMatrix::from_fn(d, 1, |i, _| x[i] - mu[i]);
        -0.5 * (v.transpose() * &precision * &v)[(0, 0)]
    };
    let cfg = MCMCConfig {
        iterations: 200_000,
        burn_in: 20_000,
        thin: 10,
        seed: 5,
        ..MCMCConfig::desk_scale()
    };
    let b = run_adaptive_mh(&mvn, &cfg, &[0.0; 4], None).map_err(|e| e.to_string())?;
    let vars: Vec<f64> = (0..d).map(|i| cov[(i, i)]).collect();
    calibrated(&b, &mu, &vars, "normal")?;
    let again = run_adaptive_mh(&mvn, &cfg, &[0.0; 4], None).map_err(|e| e.to_string())?;
    check(b.rows().zip(again.rows()).all(|(x, y)| x == y), "normal rerun differs")?;
    Ok(format!(
        "prior-only acceptance {:.3}, normal acceptance {:.3}, reruns bit-identical",
        a.acceptance_rate, b.acceptance_rate
    ))
}

fn table_study() -> Result<ReplicationReport, String> {
    replicate_study(&Scenario::new(0.6, 0.8, 1.0), 100, &MCMCConfig::desk_scale()).map_err(|e| e.to_string())
}

fn operating_characteristics(report: &ReplicationReport) -> Outcome {
    check(report.completed == 100, format!("{} of 100 replicates completed", report.completed))?;
    let mut parts = Vec::new();
    for name in ["beta11", "beta21", "psi"] {
        let p = report.get(name).ok_or(format!("report lacks {name}"))?;
        let bias = (p.mean - p.truth).abs();
        let gap = (p.esd - p.sse).abs();
        check(bias <= 0.10, format!("{name}: |Mean - truth| = {bias:.4}"))?;
        check((0.88..=1.0).contains(&p.cp), format!("{name}: CP = {:.3}", p.cp))?;
        check(gap <= 0.08, format!("{name}: |ESD - SSE| = {gap:.4}"))?;
        parts.push(format!("{name} bias {bias:.3} CP {:.2} |ESD-SSE| {gap:.3}", p.cp));
    }
    Ok(parts.join("; "))
}

fn baseline_recovery(report: &ReplicationReport) -> Outcome {
    let (a, b) = (report.mean_mse_lambda10, report.mean_mse_lambda20);
    check(a <= 0.10 && b <= 0.10, format!("MeanMSE {a:.4}, {b:.4}"))?;
    Ok(format!("MeanMSE lambda10 {a:.4}, lambda20 {b:.4}"))
}

fn misspecified_frailty() -> Outcome {
    let scenario = Scenario {
        frailty: Frailty::LognormalMixture,
        ..Scenario::new(0.6, 0.8, 1.0)
    };
    let report = replicate_study(&scenario, 100, &MCMCConfig::desk_scale()).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    for name in ["beta11", "beta21"] {
        let p = report.get(name).ok_or(format!("report lacks {name}"))?;
        let bias = (p.mean - p.truth).abs();
        check(bias <= 0.12, format!("{name}: |Mean - truth| = {bias:.4}"))?;
        parts.push(format!("{name} bias {bias:.4}"));
    }
    Ok(parts.join("; "))
}

struct SyntheticFit {
    data: Dataset,
    prior: PriorSpec,
}

fn synthetic() -> Result<SyntheticFit, String> {
    let scenario = Scenario {
        seed: 4242,
        ..Scenario::new(0.6, 0.8, 1.0)
    };
    let data = simulate_dataset(&scenario).map_err(|e| e.to_string())?;
    let prior = default_priors(&scenario, data.grid()).map_err(|e| e.to_string())?;
    Ok(SyntheticFit { data, prior })
}

fn diagnostics_identities(fit: &SyntheticFit) -> Outcome {
    let chain = fit_posterior(&fit.data, &fit.prior, &MCMCConfig::desk_scale(), 0).map_err(|e| e.to_string())?;
    let report = influence_report(&chain, &fit.data).map_err(|e| e.to_string())?;
    check(report.lpml == report.log_cpo.iter().sum::<f64>(), "LPML != sum of log CPO")?;
    check(report.dic == report.dev_at_mean + 2.0 * report.p_d, "DIC != dev_at_mean + 2 p_D")?;

    let constant = Chain::from_rows(vec![chain.row(0).to_vec(); 25], chain.layout).map_err(|e| e.to_string())?;
    let flat = influence_report(&constant, &fit.data).map_err(|e| e.to_string())?;
    check(flat.kl.iter().all(|&v| v == 0.0), "KL not zero on a constant chain")?;

    let terms = vec![vec![0.0], vec![2f64.ln()]];
    let cpo = cpo_from_terms(&terms).map_err(|e| e.to_string())?;
    let kl = kl_from_terms(&terms, &cpo).map_err(|e| e.to_string())?.kl[0];
    let hand = 3f64.ln() - 1.5 * 2f64.ln();
    check((kl - hand).abs() <= 1e-10 && (kl - 0.0589).abs() < 5e-5, format!("two-draw KL {kl}"))?;

    let max_kl = report.kl.iter().cloned().fold(0.0, f64::max);
    check(
        report.n_influential() == 0,
        format!("{} influential subjects, max KL {max_kl:.4}", report.n_influential()),
    )?;
    Ok(format!(
        "identities exact; two-draw KL {kl:.10}; max KL {max_kl:.4} <= {KL_THRESHOLD} over n = {}",
        fit.data.len()
    ))
}

fn convergence_tooling(fit: &SyntheticFit) -> Outcome {
    let layout = fit.data.layout();
    let post = Posterior::new(&fit.data, &fit.prior).map_err(|e| e.to_string())?;
    let starts = [fit.prior.mean_point().to_flat(), vec![0.0; layout.dim()]];
    let map = frailjoint::sampler::find_map_multistart(&post, &starts, MapOptions::default()).map_err(|e| e.to_string())?;
    let cov = observed_information(&post, &map, 1e-6).map_err(|e| e.to_string())?;
    let desk = MCMCConfig::desk_scale();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut chains = Vec::new();
    for k in 0..4u64 {
        let start: Vec<f64> = map
            .iter()
            .enumerate()
            .map(|(j, m)| m + 2.0 * cov[(j, j)].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        chains.push(
            run_adaptive_mh_with(&post, &desk, &start, Some(layout), Some(cov.clone() * (2.38f64.powi(2) / layout.dim() as f64)), k)
                .map_err(|e| e.to_string())?,
        );
    }
    let r = gelman_rubin(&chains).map_err(|e| e.to_string())?;
    let watched = [
        ("beta11", layout.beta1().start),
        ("beta21", layout.beta2().start),
        ("psi_star", layout.psi_star()),
    ];
    let mut parts = Vec::new();
    for (name, j) in watched {
        check(r[j] < 1.1, format!("PSRF {name} = {:.4}", r[j]))?;
    }
    parts.push(format!(
        "PSRF {}",
        watched.iter().map(|(n, j)| format!("{n} {:.3}", r[*j])).collect::<Vec<_>>().join(", ")
    ));

    let long = fit_posterior(&fit.data, &fit.prior, &MCMCConfig::paper_scale(), 0).map_err(|e| e.to_string())?;
    let conv = convergence_report(std::slice::from_ref(&long), 500).map_err(|e| e.to_string())?;
    for (name, j) in watched {
        check(conv[j].ess > 100.0, format!("paper-scale ESS {name} = {:.1}", conv[j].ess))?;
    }
    parts.push(format!(
        "paper-scale ESS {}",
        watched.iter().map(|(n, j)| format!("{n} {:.0}", conv[*j].ess)).collect::<Vec<_>>().join(", ")
    ));
    check(conv.iter().all(|c| c.acf[0] == 1.0), "ACF at lag 0 is not exactly 1")?;

    let phi = 0.5;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut x = 0.0;
    let series: Vec<f64> = (0..n)
        .map(|_| {
            x = phi * x + rng.sample::<f64, _>(StandardNormal);
            x
        })
        .collect();
    let ess = ess_and_acf(&series, 200).map_err(|e| e.to_string())?.ess;
    let closed = n as f64 * (1.0 - phi) / (1.0 + phi);
    check((ess / closed - 1.0).abs() <= 0.15, format!("AR(1) ESS {ess:.0} vs {closed:.0}"))?;
    parts.push(format!("AR(1) ESS {ess:.0} vs {closed:.0}"));
    Ok(parts.join("; "))
}

fn run(label: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(msg) => {
            println!("PASS  {label}: {msg} [{secs:.1}s]");
            true
        }
        Err(msg) => {
            println!("FAIL  {label}: {msg} [{secs:.1}s]");
            false
        }
    }
}

fn main() {
    let mut results = vec![
        run("1 likelihood oracle equivalence", likelihood_oracle),
        run("2 closed-form spot checks", closed_form_values),
        run("3 Hessian/proposal correctness", hessian_recovery),
        run("4 sampler calibration", sampler_calibration),
    ];
    let mut study = Err(String::from("study not run"));
    results.push(run("5 desk-scale replication (0.6, 0.8, 1)", || {
        study = table_study();
        operating_characteristics(study.as_ref().map_err(Clone::clone)?)
    }));
    results.push(run("6 desk-scale baseline recovery", || {
        baseline_recovery(study.as_ref().map_err(Clone::clone)?)
    }));
    results.push(run("7 misspecified-frailty robustness", misspecified_frailty));
    let fit = synthetic();
    results.push(run("8 diagnostics identities", || {
        diagnostics_identities(fit.as_ref().map_err(Clone::clone)?)
    }));
    results.push(run("9 convergence tooling", || {
        convergence_tooling(fit.as_ref().map_err(Clone::clone)?)
    }));
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
