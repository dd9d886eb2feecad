//! File formats: dataset CSV, chain CSV with a JSON sidecar, report and plot-data files.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{InfluenceReport, ParamConvergence};
use crate::error::{Error, Result};
use crate::model::{Dataset, Grid, Observation, ParamLayout};
use crate::sampler::{Chain, MCMCConfig};

/// `t' = scale·t + offset`, applied to monitoring times at load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeTransform {
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

impl TimeTransform {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite() && self.offset.is_finite()) {
            return Err(Error::validation("time transform needs a positive finite scale"));
        }
        Ok(())
    }

    pub fn apply(&self, t: f64) -> f64 {
        self.scale * t + self.offset
    }

    pub fn invert(&self, t: f64) -> f64 {
        (t - self.offset) / self.scale
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::parse(path, format!("cannot serialize: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, format!("{other:?}")),
    }
}

fn covariate_columns(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.trim()
                .strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|k| (k, i))
        })
        .collect();
    cols.sort();
    cols.into_iter().map(|(_, i)| i).collect()
}

/// Reads `u, delta, n_count, x1_1.., x2_1..`. The grid is the sorted distinct
/// (transformed) times unless `grid` is given.
pub fn read_dataset(path: &Path, grid: Option<&[f64]>, transform: Option<TimeTransform>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::parse(path, format!("missing required column `{name}`")))
    };
    let (iu, idelta, icount) = (find("u")?, find("delta")?, find("n_count")?);
    let x1_cols = covariate_columns(&headers, "x1_");
    let x2_cols = covariate_columns(&headers, "x2_");
    for (prefix, cols) in [("x1_", &x1_cols), ("x2_", &x2_cols)] {
        for (k, &c) in cols.iter().enumerate() {
            if headers[c] != *format!("{prefix}{}", k + 1) {
                return Err(Error::parse(path, format!("missing column `{prefix}{}`", k + 1)));
            }
        }
    }
    if let Some(t) = transform {
        t.validate()?;
    }

    let mut observations = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = row + 2;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| Error::parse(path, format!("line {line}: too few fields")))
        };
        let real = |i: usize| -> Result<f64> {
            field(i)?.parse::<f64>().map_err(|_| {
                Error::parse(path, format!("line {line}, column `{}`: not a number", &headers[i]))
            })
        };
        let int = |i: usize| -> Result<u64> {
            field(i)?.parse::<u64>().map_err(|_| {
                Error::parse(
                    path,
                    format!("line {line}, column `{}`: not a non-negative integer", &headers[i]),
                )
            })
        };
        let delta = int(idelta)?;
        if delta > 1 {
            return Err(Error::parse(path, format!("line {line}, column `delta`: must be 0 or 1")));
        }
        let mut u = real(iu)?;
        if let Some(t) = transform {
            u = t.apply(u);
        }
        observations.push(Observation {
            u,
            delta: delta as u8,
            n_count: int(icount)?,
            x1: x1_cols.iter().map(|&c| real(c)).collect::<Result<_>>()?,
            x2: x2_cols.iter().map(|&c| real(c)).collect::<Result<_>>()?,
        });
    }
    let (p, q) = (x1_cols.len(), x2_cols.len());
    match grid {
        Some(points) => Dataset::new(observations, Grid::new(points.to_vec())?, p, q),
        None => Dataset::with_inferred_grid(observations, p, q),
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["u".to_string(), "delta".into(), "n_count".into()];
    header.extend((1..=data.p()).map(|k| format!("x1_{k}")));
    header.extend((1..=data.q()).map(|k| format!("x2_{k}")));
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for o in data.observations() {
        let mut rec = vec![o.u.to_string(), o.delta.to_string(), o.n_count.to_string()];
        rec.extend(o.x1.iter().chain(&o.x2).map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Everything about a chain that is not a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub labels: Vec<String>,
    pub layout: Option<ParamLayout>,
    pub seed: u64,
    pub stream: u64,
    pub config: MCMCConfig,
    pub acceptance_rate: f64,
    pub map_point: Vec<f64>,
    pub grid: Option<Vec<f64>>,
    pub time_transform: Option<TimeTransform>,
    pub warnings: Vec<String>,
}

impl ChainMeta {
    pub fn of(chain: &Chain, grid: Option<&Grid>, time_transform: Option<TimeTransform>) -> Self {
        ChainMeta {
            labels: chain.labels.clone(),
            layout: chain.layout,
            seed: chain.config.seed,
            stream: chain.stream,
            config: chain.config.clone(),
            acceptance_rate: chain.acceptance_rate,
            map_point: chain.map_point.clone(),
            grid: grid.map(|g| g.points().to_vec()),
            time_transform,
            warnings: chain.warnings.clone(),
        }
    }
}

/// `chain.csv` → `chain.meta.json`.
pub fn meta_path(chain_path: &Path) -> PathBuf {
    chain_path.with_extension("meta.json")
}

pub fn write_chain(path: &Path, chain: &Chain, meta: &ChainMeta) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(&chain.labels).map_err(|e| csv_err(path, e))?;
    for row in chain.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    write_json(&meta_path(path), meta)
}

/// Recovers the block layout from `phi_star_*, nu_*, beta1_*, beta2_*, psi_star` labels.
pub fn layout_from_labels(labels: &[String]) -> Option<ParamLayout> {
    let count = |prefix: &str| labels.iter().filter(|l| l.starts_with(prefix)).count();
    let layout = ParamLayout {
        n_grid: count("phi_star_"),
        p: count("beta1_"),
        q: count("beta2_"),
    };
    (layout.n_grid > 0 && layout.labels() == labels).then_some(layout)
}

/// Reads a chain CSV and, when present, its sidecar.
pub fn read_chain(path: &Path) -> Result<(Chain, Option<ChainMeta>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let labels: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let values = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                v.parse::<f64>().map_err(|_| {
                    Error::parse(path, format!("line {}, column `{}`: not a number", row + 2, labels[j]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    let layout = layout_from_labels(&labels);
    let mut chain = Chain::from_rows(rows, layout)?;
    if layout.is_none() {
        if chain.dim() != labels.len() {
            return Err(Error::parse(path, "header and rows disagree in width"));
        }
        chain.labels = labels;
    }
    let mp = meta_path(path);
    let meta = if mp.exists() {
        let meta: ChainMeta = read_json(&mp)?;
        chain.acceptance_rate = meta.acceptance_rate;
        chain.config = meta.config.clone();
        chain.stream = meta.stream;
        chain.warnings = meta.warnings.clone();
        if meta.map_point.len() == chain.dim() {
            chain.map_point = meta.map_point.clone();
        }
        Some(meta)
    } else {
        None
    };
    Ok((chain, meta))
}

/// One row per subject: index, CPO, log CPO, KL, flag.
pub fn write_influence(path: &Path, report: &InfluenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "cpo", "log_cpo", "kl", "influential"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..report.cpo.len() {
        w.write_record([
            (i + 1).to_string(),
            report.cpo[i].to_string(),
            report.log_cpo[i].to_string(),
            report.kl[i].to_string(),
            report.influential_flags[i].to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(i, D_KL,i)` scatter data.
pub fn write_kl_plot(path: &Path, report: &InfluenceReport) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["i", "kl"]).map_err(|e| csv_err(path, e))?;
    for (i, k) in report.kl.iter().enumerate() {
        w.write_record([(i + 1).to_string(), k.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_convergence(path: &Path, rows: &[ParamConvergence]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "psrf", "ess"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let psrf = r.psrf.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([r.name.clone(), psrf, r.ess.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: parameter, lag, acf.
pub fn write_acf(path: &Path, rows: &[ParamConvergence]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["parameter", "lag", "acf"]).map_err(|e| csv_err(path, e))?;
    for r in rows {
        for (lag, v) in r.acf.iter().enumerate() {
            w.write_record([r.name.clone(), lag.to_string(), v.to_string()])
                .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One point of a marginal curve for a covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub profile: String,
    pub t: f64,
    pub mean_count: f64,
    pub survival: f64,
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["profile", "t", "mean_count", "survival"])
        .map_err(|e| csv_err(path, e))?;
    for p in points {
        w.write_record([p.profile.clone(), p.t.to_string(), p.mean_count.to_string(), p.survival.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
