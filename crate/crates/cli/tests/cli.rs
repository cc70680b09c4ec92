use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn svb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svb"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = svb(args);
    assert!(
        out.status.success(),
        "svb {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn rows(p: &Path) -> Vec<String> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

fn json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn generate(dir: &Path, model: &str, seed: &str) -> PathBuf {
    let out = dir.join(format!("gen_{model}_{seed}"));
    ok(&[
        "generate",
        "--model",
        model,
        "--mu",
        "1",
        "--variance",
        "4",
        "--n",
        "100",
        "--seed",
        seed,
        "--out",
        &s(&out),
    ]);
    out.join("data.csv")
}

#[test]
fn generate_writes_data_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = generate(dir.path(), "gaussian", "42");
    let lines = rows(&a);
    assert_eq!(lines[0], "y");
    assert_eq!(lines.len(), 101);
    assert!(a.with_file_name("generate.manifest.json").exists());

    let b_dir = dir.path().join("again");
    ok(&[
        "generate",
        "--model",
        "gaussian",
        "--mu",
        "1",
        "--variance",
        "4",
        "--n",
        "100",
        "--seed",
        "42",
        "--out",
        &s(&b_dir),
    ]);
    assert_eq!(
        fs::read(&a).unwrap(),
        fs::read(b_dir.join("data.csv")).unwrap()
    );

    let folded = generate(dir.path(), "folded-normal", "42");
    assert!(rows(&folded)[1..]
        .iter()
        .all(|r| r.parse::<f64>().unwrap() > 0.0));
}

#[test]
fn generate_rejects_bad_variance() {
    let dir = tempfile::tempdir().unwrap();
    let out = svb(&["generate", "--variance", "-1", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("variance"));
}

#[test]
fn fit_full_and_mini_batch() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "gaussian", "1");

    let full = dir.path().join("full");
    ok(&["fit", "--data", &s(&data), "--out", &s(&full)]);
    let r = json(&full.join("fit.json"));
    assert_eq!(r["posterior"]["m"].as_array().unwrap().len(), 2);
    let c = r["posterior"]["C"].as_array().unwrap();
    assert_eq!(c.len(), 2);
    assert!(c.iter().all(|row| row.as_array().unwrap().len() == 2));
    let trace = rows(&full.join("trace.csv"));
    assert_eq!(trace[0], "epoch,step,F,kl,mc_loglik");
    assert_eq!(trace.len(), 401);
    let manifest = json(&full.join("fit.manifest.json"));
    assert_eq!(manifest["config"]["train"]["epochs"], 400);
    assert_eq!(manifest["config"]["train"]["mc_samples"], 1);

    let mb = dir.path().join("mb");
    ok(&[
        "fit",
        "--data",
        &s(&data),
        "--batch-size",
        "10",
        "--out",
        &s(&mb),
    ]);
    assert_eq!(rows(&mb.join("trace.csv")).len(), 4001);
}

#[test]
fn fit_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("neg.csv");
    fs::write(&bad, "y\n1.0\n-0.5\n2.0\n").unwrap();
    let out = svb(&[
        "fit",
        "--data",
        &s(&bad),
        "--model",
        "folded-normal",
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("neg.csv"));

    let garbled = dir.path().join("garbled.csv");
    fs::write(&garbled, "y\n1.0\nabc\n").unwrap();
    let out = svb(&["fit", "--data", &s(&garbled), "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("garbled.csv"));

    let out = svb(&[
        "fit",
        "--data",
        &s(&dir.path().join("absent.csv")),
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let data = generate(dir.path(), "gaussian", "2");
    let out = svb(&[
        "fit",
        "--data",
        &s(&data),
        "--lr",
        "1e6",
        "--out",
        &s(&dir.path().join("div")),
    ]);
    assert_eq!(
        out.status.code(),
        Some(6),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = svb(&[
        "fit",
        "--data",
        &s(&data),
        "--batch-size",
        "1000",
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

fn marginal_mean(summary: &Value) -> f64 {
    summary["means"][0].as_f64().unwrap()
}

#[test]
fn grid_outputs_and_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "gaussian", "3");

    let g = dir.path().join("g");
    ok(&["grid", "--data", &s(&data), "--out", &s(&g)]);
    let lines = rows(&g.join("grid.csv"));
    assert_eq!(lines[0], "mu,logvar,mass");
    assert_eq!(lines.len(), 1 + 201 * 201);
    let total: f64 = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12, "{total}");
    let coarse = json(&g.join("grid_summary.json"));
    assert_eq!(coarse["model"], "gaussian");
    assert_eq!(coarse["spec"]["include_prior"], true);
    assert!(g.join("grid.manifest.json").exists());

    let fine = dir.path().join("fine");
    ok(&[
        "grid",
        "--data",
        &s(&data),
        "--resolution",
        "401",
        "--out",
        &s(&fine),
    ]);
    let fine = json(&fine.join("grid_summary.json"));
    let cell = 4.0 / 200.0;
    assert!((marginal_mean(&coarse) - marginal_mean(&fine)).abs() < cell);

    let np = dir.path().join("np");
    ok(&[
        "grid",
        "--data",
        &s(&data),
        "--no-prior",
        "--mu-range",
        "-1,3",
        "--out",
        &s(&np),
    ]);
    let np = json(&np.join("grid_summary.json"));
    assert_eq!(np["spec"]["include_prior"], false);
    assert!((marginal_mean(&np) - marginal_mean(&coarse)).abs() < 0.05);
}

#[test]
fn compare_reports_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "gaussian", "4");
    let g = dir.path().join("g");
    ok(&[
        "grid",
        "--data",
        &s(&data),
        "--resolution",
        "81",
        "--out",
        &s(&g),
    ]);
    let summary = g.join("grid_summary.json");

    let self_cmp = dir.path().join("self");
    let out = ok(&[
        "compare",
        "--fit",
        &s(&summary),
        "--grid",
        &s(&summary),
        "--out",
        &s(&self_cmp),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("sign agrees"));
    let c = json(&self_cmp.join("comparison.json"))["comparison"].clone();
    for key in ["mean_abs_diff", "variance_ratio_error"] {
        assert!(c[key]
            .as_array()
            .unwrap()
            .iter()
            .all(|x| x.as_f64().unwrap() == 0.0));
    }
    assert_eq!(c["rho_abs_diff"].as_f64().unwrap(), 0.0);

    let f = dir.path().join("f");
    ok(&["fit", "--data", &s(&data), "--out", &s(&f)]);
    ok(&[
        "compare",
        "--fit",
        &s(&f.join("fit.json")),
        "--grid",
        &s(&summary),
    ]);

    let out = svb(&[
        "compare",
        "--fit",
        &s(&dir.path().join("nope.json")),
        "--grid",
        &s(&summary),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let folded = generate(dir.path(), "folded-normal", "4");
    let fg = dir.path().join("fg");
    ok(&[
        "grid",
        "--data",
        &s(&folded),
        "--model",
        "folded-normal",
        "--resolution",
        "41",
        "--out",
        &s(&fg),
    ]);
    let out = svb(&[
        "compare",
        "--fit",
        &s(&f.join("fit.json")),
        "--grid",
        &s(&fg.join("grid_summary.json")),
    ]);
    assert_eq!(out.status.code(), Some(8));
}

#[test]
fn figure_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let f2 = dir.path().join("f2");
    ok(&[
        "figure",
        "2",
        "--seed",
        "7",
        "--resolution",
        "41",
        "--out",
        &s(&f2),
    ]);
    for tag in ["no_correlation", "correlation"] {
        assert_eq!(rows(&f2.join(format!("trace_{tag}.csv"))).len(), 401);
    }
    for name in [
        "data.csv",
        "histogram.csv",
        "true_pdf.csv",
        "grid.csv",
        "svb_correlation.csv",
        "figure.manifest.json",
    ] {
        assert!(f2.join(name).exists(), "{name}");
    }
    assert_eq!(rows(&f2.join("histogram.csv")).len(), 21);
    assert_eq!(rows(&f2.join("grid.csv")).len(), 1 + 41 * 41);
    assert_eq!(
        json(&f2.join("grid_summary.json"))["spec"]["include_prior"],
        false
    );

    let f4 = dir.path().join("f4");
    ok(&["figure", "4", "--resolution", "21", "--out", &s(&f4)]);
    let trace = rows(&f4.join("trace_correlation.csv"));
    assert_eq!(trace.len(), 4001);
    assert!(trace[0].starts_with("epoch,step,"));
    assert_eq!(
        trace[4000].split(',').take(2).collect::<Vec<_>>(),
        ["399", "9"]
    );

    let f6 = dir.path().join("f6");
    ok(&["figure", "6", "--resolution", "21", "--out", &s(&f6)]);
    assert_eq!(
        json(&f6.join("fit_correlation.json"))["model"],
        "folded-normal"
    );

    let out = svb(&["figure", "9", "--out", &s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn replay_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(dir.path(), "gaussian", "5");
    let f = dir.path().join("f");
    ok(&[
        "fit",
        "--data",
        &s(&data),
        "--epochs",
        "50",
        "--seed",
        "3",
        "--shuffle",
        "--batch-size",
        "25",
        "--out",
        &s(&f),
    ]);
    let before = fs::read(f.join("fit.json")).unwrap();
    fs::remove_file(f.join("fit.json")).unwrap();
    ok(&["replay", &s(&f.join("fit.manifest.json"))]);
    assert_eq!(before, fs::read(f.join("fit.json")).unwrap());

    let bogus = dir.path().join("bogus.json");
    fs::write(&bogus, "{}").unwrap();
    assert_eq!(svb(&["replay", &s(&bogus)]).status.code(), Some(4));
}
