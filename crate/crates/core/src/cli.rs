//! Command-line entry points: simulate, fit, diagnose, replicate.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::diagnostics::{convergence_report, influence_report};
use crate::error::{Error, Result};
use crate::estimation::{summarize_at, FitSummary, BCI_LEVEL};
use crate::fit::fit_posterior;
use crate::io::{self, ChainMeta, CurvePoint, TimeTransform};
use crate::model::{marginal_mean, marginal_survival, Dataset};
use crate::priors::PriorSpec;
use crate::sampler::{Chain, MCMCConfig};
use crate::simulator::{self, replicate_study_with, Scenario, SeedPolicy, StudyOptions};

const DEFAULT_MAX_LAG: usize = 50;
const DEFAULT_MESH_POINTS: usize = 101;

#[derive(Debug, Parser)]
#[command(name = "frailjoint", version, about = "Joint current status and current count models with a shared gamma frailty")]
pub struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from a scenario file.
    Simulate(SimulateArgs),
    /// MAP search plus adaptive MH; writes chains, summary and curve data.
    Fit(FitArgs),
    /// DIC, CPO, LPML, KL influence and convergence diagnostics for saved chains.
    Diagnose(DiagnoseArgs),
    /// Replication study with operating characteristics.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct McmcArgs {
    /// MCMC settings (TOML); unset fields keep the defaults.
    #[arg(long)]
    pub mcmc: Option<PathBuf>,
    /// Start from 100,000 iterations / 10,000 burn-in / thin 30 instead of the desk defaults.
    #[arg(long)]
    pub paper_scale: bool,
    /// Overrides the MCMC seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Prior file (TOML); N(0, 100) on every component when absent.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Grid override, time rescale, covariate profiles and curve mesh (TOML).
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Independent chains (RNG streams 0..K of the same seed).
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Chain CSV; repeat for several chains. Influence uses the first.
    #[arg(long = "chain", required = true)]
    pub chains: Vec<PathBuf>,
    #[arg(long)]
    pub fit_config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    /// Number of replicates (default 100, or 500 with --paper-scale).
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_enum, default_value = "independent")]
    pub seed_policy: SeedPolicyArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SeedPolicyArg {
    Independent,
    SharedData,
    Identical,
}

impl From<SeedPolicyArg> for SeedPolicy {
    fn from(a: SeedPolicyArg) -> Self {
        match a {
            SeedPolicyArg::Independent => SeedPolicy::Independent,
            SeedPolicyArg::SharedData => SeedPolicy::SharedData,
            SeedPolicyArg::Identical => SeedPolicy::Identical,
        }
    }
}

/// Covariate values for one marginal curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub name: String,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

/// Optional settings for fit and diagnose.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Fit grid in transformed time; sorted distinct times when absent.
    pub grid: Option<Vec<f64>>,
    pub time_transform: Option<TimeTransform>,
    pub profiles: Vec<Profile>,
    /// Curve evaluation times on the original scale.
    pub mesh: Option<Vec<f64>>,
    pub level: Option<f64>,
    pub max_lag: Option<usize>,
}

impl FitConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => io::read_toml(p),
            None => Ok(FitConfig::default()),
        }
    }
}

/// Desk or long-run defaults overlaid with the keys present in the file.
pub fn load_mcmc(args: &McmcArgs) -> Result<MCMCConfig> {
    let base = if args.paper_scale {
        MCMCConfig::paper_scale()
    } else {
        MCMCConfig::desk_scale()
    };
    let mut cfg = match &args.mcmc {
        None => base,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let overlay: toml::Table = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
            let mut merged = toml::Table::try_from(&base).map_err(|e| Error::parse(path, e.to_string()))?;
            merged.extend(overlay);
            merged
                .try_into()
                .map_err(|e: toml::de::Error| Error::parse(path, e.to_string()))?
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn write_manifest(out: &Path, command: &str, body: serde_json::Value) -> Result<()> {
    let mut manifest = json!({
        "tool": "frailjoint",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
    });
    if let (Some(m), serde_json::Value::Object(b)) = (manifest.as_object_mut(), body) {
        m.extend(b);
    }
    io::write_json(&out.join("manifest.json"), &manifest)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Dataset> {
    let mut scenario = Scenario::from_toml_file(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let data = simulator::simulate_dataset(&scenario)?;
    create_out(&args.out)?;
    io::write_dataset(&args.out.join("data.csv"), &data)?;
    io::write_json(&args.out.join("data.scenario.json"), &scenario)?;
    write_manifest(
        &args.out,
        "simulate",
        json!({
            "inputs": { "scenario": path_str(&args.scenario) },
            "scenario": scenario,
            "seeds": { "scenario": scenario.seed },
            "outputs": ["data.csv", "data.scenario.json"],
        }),
    )?;
    info!("wrote {} observations", data.len());
    Ok(data)
}

fn default_profiles(data: &Dataset) -> Vec<Profile> {
    vec![Profile {
        name: "baseline".into(),
        x1: vec![0.0; data.p()],
        x2: vec![0.0; data.q()],
    }]
}

/// Marginal `Λ̃₁(t|x₁)` and `S̃₂(t|x₂)` per profile; `mesh` is on the original time scale.
pub fn marginal_curves(
    summary: &FitSummary,
    profiles: &[Profile],
    mesh: &[f64],
    transform: Option<TimeTransform>,
) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::with_capacity(profiles.len() * mesh.len());
    let est = &summary.estimates;
    for prof in profiles {
        for &t in mesh {
            let tt = transform.map_or(t, |tr| tr.apply(t));
            points.push(CurvePoint {
                profile: prof.name.clone(),
                t,
                mean_count: marginal_mean(tt, &prof.x1, &summary.baseline, &est.beta1_hat)?,
                survival: marginal_survival(tt, &prof.x2, &summary.baseline, &est.beta2_hat, est.psi_hat)?,
            });
        }
    }
    Ok(points)
}

fn default_mesh(data: &Dataset, transform: Option<TimeTransform>) -> Vec<f64> {
    let last = transform.map_or(data.grid().last(), |t| t.invert(data.grid().last()));
    let first = transform.map_or(0.0, |t| t.invert(0.0).max(0.0));
    let n = DEFAULT_MESH_POINTS - 1;
    (0..=n).map(|k| first + (last - first) * k as f64 / n as f64).collect()
}

/// Pooled draws of several chains of the same layout.
pub fn pool_chains(chains: &[Chain]) -> Result<Chain> {
    let layout = chains
        .first()
        .ok_or_else(|| Error::validation("no chains"))?
        .layout;
    let rows = chains.iter().flat_map(|c| c.rows().map(<[f64]>::to_vec)).collect();
    Chain::from_rows(rows, layout)
}

pub struct FitOutput {
    pub chains: Vec<Chain>,
    pub summary: FitSummary,
}

pub fn cmd_fit(args: &FitArgs) -> Result<FitOutput> {
    if args.chains == 0 {
        return Err(Error::validation("--chains must be at least 1"));
    }
    let fc = FitConfig::load(args.fit_config.as_deref())?;
    let mcmc = load_mcmc(&args.mcmc)?;
    let data = io::read_dataset(&args.data, fc.grid.as_deref(), fc.time_transform)?;
    let layout = data.layout();
    let prior = match &args.priors {
        Some(p) => PriorSpec::from_toml_file(p, layout)?,
        None => PriorSpec::vague(layout),
    };
    prior.check_against(layout)?;
    mcmc.validate(layout.dim())?;
    for prof in &fc.profiles {
        if prof.x1.len() != data.p() || prof.x2.len() != data.q() {
            return Err(Error::validation(format!(
                "profile {:?} needs {} x1 and {} x2 values",
                prof.name,
                data.p(),
                data.q()
            )));
        }
    }
    let level = fc.level.unwrap_or(BCI_LEVEL);

    let chains: Vec<Chain> = (0..args.chains)
        .into_par_iter()
        .map(|k| fit_posterior(&data, &prior, &mcmc, k as u64))
        .collect::<Result<_>>()?;

    create_out(&args.out)?;
    let mut chain_files = Vec::new();
    for (k, chain) in chains.iter().enumerate() {
        let name = if args.chains == 1 {
            "chain.csv".to_string()
        } else {
            format!("chain_{}.csv", k + 1)
        };
        let meta = ChainMeta::of(chain, Some(data.grid()), fc.time_transform);
        io::write_chain(&args.out.join(&name), chain, &meta)?;
        info!("{name}: acceptance {:.3}", chain.acceptance_rate);
        chain_files.push(name);
    }
    let pooled = pool_chains(&chains)?;
    let summary = summarize_at(&pooled, &data, level)?;
    io::write_text(&args.out.join("summary.txt"), &summary.to_table())?;
    io::write_json(&args.out.join("summary.json"), &summary)?;

    let profiles = if fc.profiles.is_empty() {
        default_profiles(&data)
    } else {
        fc.profiles.clone()
    };
    let mesh = fc.mesh.clone().unwrap_or_else(|| default_mesh(&data, fc.time_transform));
    let curves = marginal_curves(&summary, &profiles, &mesh, fc.time_transform)?;
    io::write_curves(&args.out.join("curves.csv"), &curves)?;

    write_manifest(
        &args.out,
        "fit",
        json!({
            "inputs": {
                "data": path_str(&args.data),
                "priors": args.priors.as_deref().map(path_str),
                "mcmc": args.mcmc.mcmc.as_deref().map(path_str),
                "fit_config": args.fit_config.as_deref().map(path_str),
            },
            "mcmc": mcmc,
            "fit_config": fc,
            "chains": args.chains,
            "seeds": { "mcmc": mcmc.seed, "streams": (0..args.chains).collect::<Vec<_>>() },
            "grid": data.grid().points(),
            "outputs": { "chains": chain_files, "summary": ["summary.txt", "summary.json"], "curves": "curves.csv" },
        }),
    )?;
    Ok(FitOutput { chains, summary })
}

pub fn cmd_diagnose(args: &DiagnoseArgs) -> Result<crate::diagnostics::InfluenceReport> {
    let fc = FitConfig::load(args.fit_config.as_deref())?;
    let mut chains = Vec::new();
    let mut first_meta = None;
    for path in &args.chains {
        let (chain, meta) = io::read_chain(path)?;
        if first_meta.is_none() {
            first_meta = Some(meta);
        }
        chains.push(chain);
    }
    let meta = first_meta.flatten();
    let grid = fc.grid.clone().or_else(|| meta.as_ref().and_then(|m| m.grid.clone()));
    let transform = fc.time_transform.or(meta.as_ref().and_then(|m| m.time_transform));
    let data = io::read_dataset(&args.data, grid.as_deref(), transform)?;
    for (path, c) in args.chains.iter().zip(&chains) {
        if c.layout != Some(data.layout()) {
            return Err(Error::validation(format!(
                "chain {} does not match the dataset dimensions",
                path.display()
            )));
        }
    }
    let report = influence_report(&chains[0], &data)?;
    let conv = convergence_report(&chains, fc.max_lag.unwrap_or(DEFAULT_MAX_LAG))?;

    create_out(&args.out)?;
    io::write_influence(&args.out.join("influence.csv"), &report)?;
    io::write_kl_plot(&args.out.join("kl_plot.csv"), &report)?;
    io::write_json(
        &args.out.join("model_comparison.json"),
        &json!({
            "dic": report.dic,
            "p_d": report.p_d,
            "dev_bar": report.dev_bar,
            "dev_at_mean": report.dev_at_mean,
            "lpml": report.lpml,
            "n_influential": report.n_influential(),
            "kl_threshold": crate::diagnostics::KL_THRESHOLD,
        }),
    )?;
    io::write_convergence(&args.out.join("convergence.csv"), &conv)?;
    io::write_acf(&args.out.join("acf.csv"), &conv)?;
    write_manifest(
        &args.out,
        "diagnose",
        json!({
            "inputs": {
                "data": path_str(&args.data),
                "chains": args.chains.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
                "fit_config": args.fit_config.as_deref().map(path_str),
            },
            "fit_config": fc,
            "chain_seeds": chains.iter().map(|c| json!({"seed": c.config.seed, "stream": c.stream})).collect::<Vec<_>>(),
            "grid": data.grid().points(),
            "outputs": ["influence.csv", "kl_plot.csv", "model_comparison.json", "convergence.csv", "acf.csv"],
        }),
    )?;
    Ok(report)
}

pub fn cmd_replicate(args: &ReplicateArgs) -> Result<simulator::ReplicationReport> {
    let mut scenario = Scenario::from_toml_file(&args.scenario)?;
    let mcmc = load_mcmc(&args.mcmc)?;
    if let Some(seed) = args.mcmc.seed {
        scenario.seed = seed;
    }
    let r = args
        .replicates
        .unwrap_or(if args.mcmc.paper_scale { 500 } else { 100 });
    let options = StudyOptions {
        seed_policy: args.seed_policy.into(),
    };
    let report = replicate_study_with(&scenario, r, &mcmc, options)?;
    create_out(&args.out)?;
    io::write_text(&args.out.join("report.txt"), &report.to_table())?;
    io::write_json(&args.out.join("report.json"), &report)?;
    write_manifest(
        &args.out,
        "replicate",
        json!({
            "inputs": {
                "scenario": path_str(&args.scenario),
                "mcmc": args.mcmc.mcmc.as_deref().map(path_str),
            },
            "scenario": scenario,
            "mcmc": mcmc,
            "replicates": r,
            "seed_policy": options.seed_policy,
            "seeds": {
                "scenario": scenario.seed,
                "mcmc": mcmc.seed,
                "per_replicate": report.replicates.iter().map(|x| [x.data_seed, x.mcmc_seed]).collect::<Vec<_>>(),
            },
            "outputs": ["report.txt", "report.json"],
        }),
    )?;
    Ok(report)
}

/// Runs the parsed command on a pool of `--jobs` threads.
pub fn run(cli: &Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::validation("--jobs must be at least 1"));
        }
        builder = builder.num_threads(j);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::validation(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| ()),
        Command::Fit(a) => cmd_fit(a).map(|out| print!("{}", out.summary.to_table())),
        Command::Diagnose(a) => cmd_diagnose(a).map(|r| {
            println!("DIC {:.3}  p_D {:.3}  LPML {:.3}  influential {}", r.dic, r.p_d, r.lpml, r.n_influential());
        }),
        Command::Replicate(a) => cmd_replicate(a).map(|r| print!("{}", r.to_table())),
    })
}
