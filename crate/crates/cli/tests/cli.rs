//! End-to-end runs of the `gngarch` binary: simulate → fit → forecast →
//! varma-check → diagnose → compare, plus the network builder and the
//! exit-code contract.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gngarch"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed: {}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_cycle5_edges(dir: &Path) -> PathBuf {
    let path = dir.join("edges.csv");
    fs::write(&path, "src,dst\n0,1\n1,2\n2,3\n3,4\n4,0\n").unwrap();
    path
}

fn write_sim_config(dir: &Path, edges: &Path, t_total: usize, seed: u64) -> PathBuf {
    let path = dir.join("sim.json");
    let config = format!(
        r#"{{
  "graph": "{}",
  "orders": {{ "p": 1, "q": 1, "s": [1], "rp": [1] }},
  "params": {{ "alpha0": 0.05, "alpha": [0.20], "gamma": [0.60],
               "beta": [[0.05]], "delta": [[0.05]] }},
  "t_total": {t_total},
  "burn_frac": 0.2,
  "seed": {seed}
}}"#,
        edges.display()
    );
    fs::write(&path, config).unwrap();
    path
}

#[test]
fn simulate_is_reproducible_and_sized() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = write_cycle5_edges(tmp.path());
    let config = write_sim_config(tmp.path(), &edges, 2000, 0);
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        let output = run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&output, "simulate");
    }
    let panel_a = fs::read(out_a.join("panel.csv")).unwrap();
    let panel_b = fs::read(out_b.join("panel.csv")).unwrap();
    assert_eq!(panel_a, panel_b, "same seed must give identical files");
    // 2000 samples minus 20% burn-in = 1600 rows plus header.
    let text = String::from_utf8(panel_a).unwrap();
    assert_eq!(text.lines().count(), 1601);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["burn"], 400);
    assert_eq!(meta["seed"], 0);
    assert!(meta["config_sha256"].as_str().unwrap().len() == 64);
    assert!(out_a.join("variance.csv").exists());
    assert!(out_a.join("cov_trace.csv").exists());
}

#[test]
fn simulate_divergence_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = write_cycle5_edges(tmp.path());
    let config = tmp.path().join("explosive.json");
    fs::write(
        &config,
        format!(
            r#"{{
  "graph": "{}",
  "orders": {{ "p": 1, "q": 1, "s": [1], "rp": [1] }},
  "params": {{ "alpha0": 0.06, "alpha": [0.40], "gamma": [0.55],
               "beta": [[0.10]], "delta": [[0.10]] }},
  "t_total": 2000,
  "seed": 0
}}"#,
            edges.display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let output = run(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(3), "divergence must exit 3");
    assert!(out.join("divergence.json").exists(), "divergence report written");
}

#[test]
fn config_and_io_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = write_cycle5_edges(tmp.path());
    // Unknown key in the config → 2.
    let bad = tmp.path().join("bad.json");
    fs::write(
        &bad,
        format!(
            r#"{{ "graph": "{}", "orders": {{ "p": 1, "q": 1, "s": [1], "rp": [1] }},
                 "params": {{ "alpha0": 0.05, "alpha": [0.2], "gamma": [0.6],
                              "beta": [[0.05]], "delta": [[0.05]] }},
                 "t_total": 100, "unexpected_key": true }}"#,
            edges.display()
        ),
    )
    .unwrap();
    let output = run(&[
        "simulate",
        "--config",
        bad.to_str().unwrap(),
        "--out",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2), "schema violation must exit 2");

    // Missing config file → 4.
    let output = run(&[
        "simulate",
        "--config",
        tmp.path().join("absent.json").to_str().unwrap(),
        "--out",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(4), "missing file must exit 4");
}

#[test]
fn full_pipeline_on_simulated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let edges = write_cycle5_edges(tmp.path());
    let config = write_sim_config(tmp.path(), &edges, 700, 3);
    let sim_dir = tmp.path().join("sim");
    assert_success(
        &run(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--out",
            sim_dir.to_str().unwrap(),
        ]),
        "simulate",
    );
    let panel = sim_dir.join("panel.csv");

    // Short fit to keep the pipeline fast; protocol-length fits are covered
    // by the acceptance suite.
    let report = tmp.path().join("report.json");
    assert_success(
        &run(&[
            "fit",
            "--data",
            panel.to_str().unwrap(),
            "--graph",
            edges.to_str().unwrap(),
            "--loss",
            "nll",
            "--epochs",
            "25",
            "--out",
            report.to_str().unwrap(),
        ]),
        "fit",
    );
    let parsed: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["report"]["loss_curve"].as_array().unwrap().len(), 25);
    assert!(parsed["report"]["theta_hat"]["alpha0"].as_f64().unwrap() > 0.0);

    // Forecast from the fit report.
    let fc_dir = tmp.path().join("fc");
    assert_success(
        &run(&[
            "forecast",
            "--data",
            panel.to_str().unwrap(),
            "--graph",
            edges.to_str().unwrap(),
            "--params",
            report.to_str().unwrap(),
            "--horizon",
            "5",
            "--out",
            fc_dir.to_str().unwrap(),
        ]),
        "forecast",
    );
    let fc = fs::read_to_string(fc_dir.join("variance_forecast.csv")).unwrap();
    assert_eq!(fc.lines().count(), 6); // header + 5 steps

    // VARMA identity check against the generating parameters.
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{ "orders": { "p": 1, "q": 1, "s": [1], "rp": [1] },
             "params": { "alpha0": 0.05, "alpha": [0.20], "gamma": [0.60],
                         "beta": [[0.05]], "delta": [[0.05]] } }"#,
    )
    .unwrap();
    let residuals = tmp.path().join("residuals.json");
    assert_success(
        &run(&[
            "varma-check",
            "--panel",
            panel.to_str().unwrap(),
            "--variance",
            sim_dir.join("variance.csv").to_str().unwrap(),
            "--cov-trace",
            sim_dir.join("cov_trace.csv").to_str().unwrap(),
            "--graph",
            edges.to_str().unwrap(),
            "--params",
            spec.to_str().unwrap(),
            "--out",
            residuals.to_str().unwrap(),
        ]),
        "varma-check",
    );
    let resid: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&residuals).unwrap()).unwrap();
    assert!(resid["variance_residual"].as_f64().unwrap() < 1e-8);
    assert!(resid["covariance_residual"].as_f64().unwrap() < 1e-8);

    // Diagnostics with model-implied extras.
    let diag_dir = tmp.path().join("diag");
    assert_success(
        &run(&[
            "diagnose",
            "--panel",
            panel.to_str().unwrap(),
            "--fit",
            report.to_str().unwrap(),
            "--graph",
            edges.to_str().unwrap(),
            "--out",
            diag_dir.to_str().unwrap(),
        ]),
        "diagnose",
    );
    for file in
        ["acf.csv", "moments.json", "qq_1.csv", "qq_7.csv", "qq_30.csv", "adf.csv", "spurious.csv", "leverage.csv", "corbit.csv"]
    {
        assert!(diag_dir.join(file).exists(), "missing {file}");
    }
    let corbit = fs::read_to_string(diag_dir.join("corbit.csv")).unwrap();
    assert_eq!(corbit.lines().count(), 1 + 20 * 3, "20 lags x 3 stages");

    // Model comparison traces.
    let compare = tmp.path().join("compare.csv");
    assert_success(
        &run(&[
            "compare",
            "--data",
            panel.to_str().unwrap(),
            "--graph",
            edges.to_str().unwrap(),
            "--params",
            report.to_str().unwrap(),
            "--window",
            "60",
            "--garch-epochs",
            "30",
            "--out",
            compare.to_str().unwrap(),
        ]),
        "compare",
    );
    let mut reader = csv::Reader::from_path(&compare).unwrap();
    let header = reader.headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        vec!["time", "node", "label", "proxy", "gngarch_rescaled", "riskmetrics", "uni_garch"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 560 * 5, "one row per node per time step");
    assert!(rows
        .iter()
        .all(|r| r.iter().skip(3).all(|v| v.parse::<f64>().unwrap().is_finite())));
}

#[test]
fn network_builder_writes_edges_and_correlations() {
    let tmp = tempfile::tempdir().unwrap();
    let prices = tmp.path().join("prices.csv");
    // Two correlated tickers and one independent one over three months of
    // weekdays.
    let mut text = String::from("date,AAA,BBB,CCC\n");
    let mut a = 100.0f64;
    let mut b = 50.0f64;
    let mut c = 200.0f64;
    let mut day = 1u32;
    let mut month = 1u32;
    let mut count = 0;
    let mut state = 12345u64;
    let mut rand = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0
    };
    while count < 63 {
        let shared = 0.02 * rand();
        a *= (shared + 0.002 * rand()).exp();
        b *= (shared + 0.002 * rand()).exp();
        c *= (0.02 * rand()).exp();
        text.push_str(&format!("2024-{month:02}-{day:02},{a:.4},{b:.4},{c:.4}\n"));
        day += 1;
        if day > 21 {
            day = 1;
            month += 1;
        }
        count += 1;
    }
    fs::write(&prices, text).unwrap();
    let out = tmp.path().join("net");
    let output = run(&[
        "network",
        "--prices",
        prices.to_str().unwrap(),
        "--quantile",
        "0.7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&output, "network");
    let edges = fs::read_to_string(out.join("edges.csv")).unwrap();
    assert!(edges.contains("AAA") && edges.contains("BBB"));
    assert!(!edges.contains("CCC"), "independent ticker must stay unlinked:\n{edges}");
    assert!(out.join("integrated_corr.csv").exists());
    assert!(out.join("returns.csv").exists());
}
