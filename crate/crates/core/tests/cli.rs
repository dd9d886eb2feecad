use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn frailjoint(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_frailjoint"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = frailjoint(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SCENARIO: &str = "beta11 = 0.6\nbeta21 = 0.8\npsi = 1.0\nn = 300\nseed = 17\n";
const MCMC: &str = "iterations = 4000\nburn_in = 1000\nthin = 5\nadapt_start = 500\nadapt_interval = 250\nseed = 3\n";

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("scenario.toml"), SCENARIO).unwrap();
        fs::write(w.path("mcmc.toml"), MCMC).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, out: &str) -> PathBuf {
        let dir = self.path(out);
        ok(&["simulate", "--scenario", p(&self.path("scenario.toml")), "--out", p(&dir)]);
        dir
    }

    fn fit(&self, data: &Path, out: &str, extra: &[&str]) -> PathBuf {
        let dir = self.path(out);
        let mcmc = self.path("mcmc.toml");
        let mut args = vec!["fit", "--data", p(data), "--mcmc", p(&mcmc), "--out", p(&dir)];
        args.extend_from_slice(extra);
        ok(&args);
        dir
    }
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let w = Workspace::new();
    let a = w.simulate("a");
    let b = w.simulate("b");
    let data = fs::read(a.join("data.csv")).unwrap();
    assert_eq!(data, fs::read(b.join("data.csv")).unwrap());
    let text = String::from_utf8(data).unwrap();
    assert_eq!(text.lines().next().unwrap(), "u,delta,n_count,x1_1,x2_1");
    assert_eq!(text.lines().count(), 301);
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seeds"]["scenario"], 17);
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let w = Workspace::new();
    fs::write(w.path("zero.toml"), "beta11 = 0.6\nbeta21 = 0.8\nn = 0\n").unwrap();
    let out = frailjoint(&["simulate", "--scenario", p(&w.path("zero.toml")), "--out", p(&w.path("z"))]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(w.path("typo.toml"), "beta11 = 0.6\nbeta_21 = 0.8\n").unwrap();
    let out = frailjoint(&["simulate", "--scenario", p(&w.path("typo.toml")), "--out", p(&w.path("t"))]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(w.path("bad.csv"), "u,delta,x1_1,x2_1\n0.5,1,0,1\n").unwrap();
    let out = frailjoint(&["fit", "--data", p(&w.path("bad.csv")), "--out", p(&w.path("f"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_count"));

    let out = frailjoint(&["fit", "--data", p(&w.path("missing.csv")), "--out", p(&w.path("f"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fit_then_diagnose() {
    let w = Workspace::new();
    let sim = w.simulate("sim");
    let data = sim.join("data.csv");
    fs::write(
        w.path("fit.toml"),
        "[[profiles]]\nname = \"low\"\nx1 = [0.0]\nx2 = [0.0]\n\n[[profiles]]\nname = \"high\"\nx1 = [1.0]\nx2 = [1.0]\n",
    )
    .unwrap();
    let fc = w.path("fit.toml");
    let fit = w.fit(&data, "fit", &["--fit-config", p(&fc)]);
    let again = w.fit(&data, "again", &["--fit-config", p(&fc)]);
    for f in ["chain.csv", "chain.meta.json", "summary.txt", "summary.json", "curves.csv", "manifest.json"] {
        assert!(fit.join(f).exists(), "missing {f}");
    }
    for f in ["chain.csv", "summary.json", "curves.csv"] {
        assert_eq!(fs::read(fit.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f} differs");
    }
    let chain = fs::read_to_string(fit.join("chain.csv")).unwrap();
    assert_eq!(chain.lines().count(), 1 + 600);

    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut rdr = csv::Reader::from_path(fit.join("curves.csv")).unwrap();
    for row in rdr.records() {
        let row = row.unwrap();
        let vals = (row[2].parse::<f64>().unwrap(), row[3].parse::<f64>().unwrap());
        match &row[0] {
            "low" => low.push(vals),
            "high" => high.push(vals),
            other => panic!("unexpected profile {other}"),
        }
    }
    assert_eq!(low.len(), 101);
    for ((m_lo, s_lo), (m_hi, s_hi)) in low.iter().zip(&high).skip(1) {
        assert!(m_hi > m_lo && s_hi <= s_lo);
    }

    let diag = w.path("diag");
    ok(&["diagnose", "--data", p(&data), "--chain", p(&fit.join("chain.csv")), "--out", p(&diag)]);
    let cmp = read_json(&diag.join("model_comparison.json"));
    let dic = cmp["dic"].as_f64().unwrap();
    let dev = cmp["dev_at_mean"].as_f64().unwrap();
    let p_d = cmp["p_d"].as_f64().unwrap();
    assert_eq!(dic, dev + 2.0 * p_d);
    assert!(diag.join("influence.csv").exists() && diag.join("acf.csv").exists());

    let mut lines = chain.lines();
    let header = lines.next().unwrap();
    let first = lines.next().unwrap();
    let constant = format!("{header}\n{}", format!("{first}\n").repeat(50));
    fs::write(w.path("constant.csv"), constant).unwrap();
    fs::copy(fit.join("chain.meta.json"), w.path("constant.meta.json")).unwrap();
    let diag = w.path("diag_const");
    ok(&["diagnose", "--data", p(&data), "--chain", p(&w.path("constant.csv")), "--out", p(&diag)]);
    let mut rdr = csv::Reader::from_path(diag.join("influence.csv")).unwrap();
    let kl_col = rdr.headers().unwrap().iter().position(|h| h == "kl").unwrap();
    for row in rdr.records() {
        assert_eq!(row.unwrap()[kl_col].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn identical_replicates_have_zero_spread() {
    let w = Workspace::new();
    let out = w.path("rep");
    ok(&[
        "replicate",
        "--scenario",
        p(&w.path("scenario.toml")),
        "--mcmc",
        p(&w.path("mcmc.toml")),
        "--replicates",
        "2",
        "--seed-policy",
        "identical",
        "--out",
        p(&out),
    ]);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["R"], 2);
    for param in report["parameters"].as_array().unwrap() {
        assert_eq!(param["SSE"].as_f64().unwrap(), 0.0, "{param}");
    }
    assert!(out.join("report.txt").exists());
}
