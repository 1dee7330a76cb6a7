use std::path::Path;

use gngarch::diagnostics;
use gngarch::error::{GngarchError, Result};
use gngarch::estimate::{self, FitConfig, FitReport, LossKind};
use gngarch::graph::{NetworkMasks, NetworkTopology};
use gngarch::io;
use gngarch::market;
use gngarch::model::{self, SimulationConfig};
use gngarch::panel::ReturnPanel;
use gngarch::params::{GlobalParams, OrderSpec, ParamSet};
use gngarch::varma;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Simulation run configuration on disk.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    /// Path to an edge-list or adjacency CSV.
    graph: String,
    orders: OrderSpec,
    #[serde(default)]
    params: Option<GlobalParams>,
    #[serde(default)]
    threshold_params: Option<gngarch::params::ThresholdParams>,
    t_total: usize,
    #[serde(default = "default_burn")]
    burn_frac: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    sigma0: Option<Vec<Vec<f64>>>,
}

fn default_burn() -> f64 {
    0.20
}

/// Optional fit settings file; anything absent falls back to defaults, and
/// command-line flags win over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    #[serde(default)]
    orders: Option<OrderSpec>,
    #[serde(default)]
    init: Option<GlobalParams>,
    #[serde(default)]
    loss: Option<LossKind>,
    #[serde(default)]
    epochs: Option<usize>,
    #[serde(default)]
    lr: Option<f64>,
    #[serde(default)]
    adam_beta1: Option<f64>,
    #[serde(default)]
    adam_beta2: Option<f64>,
    #[serde(default)]
    adam_eps: Option<f64>,
    #[serde(default)]
    grad_step: Option<f64>,
    #[serde(default)]
    param_floor: Option<f64>,
}

/// Fit output: the report plus the orders it was run under, so downstream
/// commands can reuse it as a parameter source.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub orders: OrderSpec,
    pub report: FitReport,
}

#[derive(Debug, Serialize)]
struct SimulateMeta<'a> {
    seed: u64,
    t_total: usize,
    burn: usize,
    nodes: usize,
    labels: &'a [String],
    orders: &'a OrderSpec,
    pd_repairs: usize,
    config_sha256: String,
    version: &'static str,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)?;
    Ok(())
}

fn parse_loss(name: &str) -> Result<LossKind> {
    match name.to_ascii_lowercase().as_str() {
        "mse" => Ok(LossKind::Mse),
        "qlike" => Ok(LossKind::Qlike),
        "nll" => Ok(LossKind::Nll),
        other => Err(GngarchError::Invalid(format!("unknown loss '{other}'"))),
    }
}

/// Accept either a model spec (orders + params) or a fit report.
fn load_model_params(path: &Path) -> Result<(OrderSpec, GlobalParams)> {
    let text = std::fs::read_to_string(path)?;
    if let Ok(spec) = serde_json::from_str::<io::ModelSpecFile>(&text) {
        spec.validate()?;
        if let Some(params) = spec.params {
            return Ok((spec.orders, params));
        }
        return Err(GngarchError::Invalid(
            "threshold parameter files are not accepted here; supply global params".into(),
        ));
    }
    let report: ReportFile = serde_json::from_str(&text)?;
    Ok((report.orders, report.report.theta_hat))
}

pub fn simulate(config_path: &Path, out: &Path, seed: Option<u64>, verbose: bool) -> Result<()> {
    let file: SimulateFile = io::read_json(config_path)?;
    let topology = io::read_graph_csv(Path::new(&file.graph))?;
    let d = topology.node_count();
    let params = match (&file.params, &file.threshold_params) {
        (Some(p), None) => ParamSet::Global(p.clone()),
        (None, Some(p)) => ParamSet::Threshold(p.clone()),
        _ => {
            return Err(GngarchError::Invalid(
                "specify exactly one of 'params' or 'threshold_params'".into(),
            ))
        }
    };
    let seed = seed.unwrap_or(file.seed);
    let config = SimulationConfig {
        t_total: file.t_total,
        burn_frac: file.burn_frac,
        seed,
        x0: file.x0.as_ref().map(|v| DVector::from_vec(v.clone())),
        sigma0: file.sigma0.as_ref().map(|rows| {
            let n = rows.len();
            DMatrix::from_fn(n, rows.first().map_or(0, Vec::len), |i, j| rows[i][j])
        }),
    };
    ensure_dir(out)?;
    if verbose {
        eprintln!("simulating {} steps on {} nodes (seed {seed})", file.t_total, d);
    }
    let output = match model::simulate(&params, &file.orders, &topology, &config) {
        Ok(output) => output,
        Err(GngarchError::Divergence { time, node, value }) => {
            io::write_json(
                &out.join("divergence.json"),
                &serde_json::json!({ "time": time, "node": node, "value": value }),
            )?;
            return Err(GngarchError::Divergence { time, node, value });
        }
        Err(e) => return Err(e),
    };
    io::write_panel_csv(&out.join("panel.csv"), &output.returns)?;
    io::write_matrix_csv(
        &out.join("variance.csv"),
        &output.variances,
        &output.returns.labels,
        &output.returns.times,
    )?;
    io::write_cov_trace_csv(&out.join("cov_trace.csv"), &output.covariances)?;
    let burn = (file.burn_frac * file.t_total as f64).floor() as usize;
    let meta = SimulateMeta {
        seed,
        t_total: file.t_total,
        burn,
        nodes: d,
        labels: output.returns.labels.as_slice(),
        orders: &file.orders,
        pd_repairs: output.repairs,
        config_sha256: sha256_file(config_path)?,
        version: env!("CARGO_PKG_VERSION"),
    };
    io::write_json(&out.join("meta.json"), &meta)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn fit(
    data: &Path,
    graph: &Path,
    loss: Option<&str>,
    epochs: Option<usize>,
    lr: Option<f64>,
    config: Option<&Path>,
    out: &Path,
    verbose: bool,
) -> Result<()> {
    let panel = io::read_panel_csv(data)?;
    let topology = io::read_graph_csv(graph)?;
    let file: FitFile = match config {
        Some(path) => io::read_json(path)?,
        None => FitFile::default(),
    };
    let defaults = FitConfig::default();
    let fit_config = FitConfig {
        loss: match loss {
            Some(name) => parse_loss(name)?,
            None => file.loss.unwrap_or(defaults.loss),
        },
        epochs: epochs.or(file.epochs).unwrap_or(defaults.epochs),
        lr: lr.or(file.lr).unwrap_or(defaults.lr),
        adam_beta1: file.adam_beta1.unwrap_or(defaults.adam_beta1),
        adam_beta2: file.adam_beta2.unwrap_or(defaults.adam_beta2),
        adam_eps: file.adam_eps.unwrap_or(defaults.adam_eps),
        grad_step: file.grad_step.unwrap_or(defaults.grad_step),
        param_floor: file.param_floor.unwrap_or(defaults.param_floor),
    };
    let orders = file.orders.unwrap_or_else(OrderSpec::one_one);
    let init = match file.init {
        Some(init) => init,
        None => estimate::default_init(&orders),
    };
    if verbose {
        eprintln!(
            "fitting {} epochs of {} on {} nodes x {} steps",
            fit_config.epochs,
            fit_config.loss,
            panel.node_count(),
            panel.len()
        );
    }
    let report = estimate::fit(&panel, &orders, &topology, &fit_config, &init)?;
    if verbose {
        eprintln!(
            "final loss {:.6}, grad norm {:.3e}",
            report.loss_curve.last().unwrap(),
            report.final_grad_norm
        );
    }
    io::write_json(out, &ReportFile { orders, report })?;
    Ok(())
}

pub fn forecast(
    data: &Path,
    graph: &Path,
    params_path: &Path,
    horizon: usize,
    out: &Path,
) -> Result<()> {
    let panel = io::read_panel_csv(data)?;
    let topology = io::read_graph_csv(graph)?;
    let (orders, params) = load_model_params(params_path)?;
    let states = model::forecast(&params, &orders, &topology, &panel, horizon)?;
    ensure_dir(out)?;
    let d = panel.node_count();
    let mut variances = DMatrix::zeros(d, horizon);
    let mut sigmas = Vec::with_capacity(horizon);
    let mut repaired = Vec::with_capacity(horizon);
    for (step, state) in states.iter().enumerate() {
        variances.set_column(step, &state.h);
        sigmas.push(state.sigma.clone());
        repaired.push(state.repaired);
    }
    let times: Vec<String> = (1..=horizon).map(|h| h.to_string()).collect();
    io::write_matrix_csv(&out.join("variance_forecast.csv"), &variances, &panel.labels, &times)?;
    io::write_cov_trace_csv(&out.join("cov_forecast.csv"), &sigmas)?;
    io::write_json(
        &out.join("meta.json"),
        &serde_json::json!({ "horizon": horizon, "repaired": repaired }),
    )?;
    Ok(())
}

pub fn network(prices_path: &Path, quantile: f64, out: &Path) -> Result<()> {
    let prices = io::read_prices_csv(prices_path)?;
    let returns = market::log_returns(&prices)?;
    let dates = prices.return_dates();
    let (topology, integrated) = market::coc_network(&returns, &dates, quantile)?;
    ensure_dir(out)?;
    io::write_edges_csv(&out.join("edges.csv"), &topology)?;
    io::write_corr_csv(&out.join("integrated_corr.csv"), &integrated, topology.labels())?;
    io::write_panel_csv(&out.join("returns.csv"), &returns)?;
    Ok(())
}

pub fn diagnose(
    panel_path: &Path,
    fit: Option<&Path>,
    graph: Option<&Path>,
    h_max: usize,
    r_max: usize,
    out: &Path,
) -> Result<()> {
    let panel = io::read_panel_csv(panel_path)?;
    ensure_dir(out)?;
    let d = panel.node_count();

    // Return ACF per node.
    {
        let mut w = csv::Writer::from_path(out.join("acf.csv"))?;
        w.write_record(["node", "label", "lag", "value", "band"])?;
        for i in 0..d {
            let acf = diagnostics::sample_acf(&panel.series(i), 20)?;
            for (lag, value) in acf.lags.iter().zip(&acf.values) {
                w.write_record([
                    i.to_string(),
                    panel.labels[i].clone(),
                    lag.to_string(),
                    format!("{value:.10}"),
                    format!("{:.10}", acf.band),
                ])?;
            }
        }
        w.flush()?;
    }

    // Kurtosis and skewness per node.
    {
        #[derive(Serialize)]
        struct Moments<'a> {
            node: usize,
            label: &'a str,
            kurtosis: f64,
            skewness: f64,
        }
        let moments: Vec<Moments> = (0..d)
            .map(|i| {
                let (kurtosis, skewness) = diagnostics::moment_stats(&panel.series(i))?;
                Ok(Moments { node: i, label: &panel.labels[i], kurtosis, skewness })
            })
            .collect::<Result<_>>()?;
        io::write_json(&out.join("moments.json"), &moments)?;
    }

    // Aggregational-Gaussianity QQ data at 1/7/30-step windows.
    for window in [1usize, 7, 30] {
        let mut w = csv::Writer::from_path(out.join(format!("qq_{window}.csv")))?;
        w.write_record(["node", "label", "sample", "normal"])?;
        for i in 0..d {
            let qq = diagnostics::aggregate_returns(&panel.series(i), window)?;
            for (s, n) in qq.sample.iter().zip(&qq.normal) {
                w.write_record([
                    i.to_string(),
                    panel.labels[i].clone(),
                    format!("{s:.10}"),
                    format!("{n:.10}"),
                ])?;
            }
        }
        w.flush()?;
    }

    // ADF per node.
    {
        let mut w = csv::Writer::from_path(out.join("adf.csv"))?;
        w.write_record(["node", "label", "statistic", "lags", "reject_at_5pct"])?;
        for i in 0..d {
            let adf = diagnostics::adf_test(&panel.series(i), None)?;
            w.write_record([
                i.to_string(),
                panel.labels[i].clone(),
                format!("{:.8}", adf.statistic),
                adf.lags.to_string(),
                adf.reject_at_5pct.to_string(),
            ])?;
        }
        w.flush()?;
    }

    // Pairwise spurious-relationship scan.
    {
        let mut w = csv::Writer::from_path(out.join("spurious.csv"))?;
        w.write_record(["i", "j", "label_i", "label_j", "r_squared", "durbin_watson", "flagged"])?;
        for diag in diagnostics::spurious_scan(&panel)? {
            w.write_record([
                diag.i.to_string(),
                diag.j.to_string(),
                panel.labels[diag.i].clone(),
                panel.labels[diag.j].clone(),
                format!("{:.10}", diag.r_squared),
                format!("{:.10}", diag.durbin_watson),
                diag.flagged.to_string(),
            ])?;
        }
        w.flush()?;
    }

    // Model-implied diagnostics need fitted parameters and the graph.
    if let Some(fit_path) = fit {
        let graph_path = graph.ok_or_else(|| {
            GngarchError::Invalid("--fit requires --graph for model-implied diagnostics".into())
        })?;
        let topology = io::read_graph_csv(graph_path)?;
        let (orders, params) = load_model_params(fit_path)?;
        let variance = estimate::fitted_variance_matrix(&params, &orders, &topology, &panel)?;
        let sd = variance.map(f64::sqrt);

        let mut w = csv::Writer::from_path(out.join("leverage.csv"))?;
        w.write_record([
            "node", "label", "class", "q25", "median", "q75", "count",
        ])?;
        for summary in diagnostics::leverage_split(&panel, &sd)? {
            for (class, quartiles, count) in [
                ("positive", summary.positive, summary.n_positive),
                ("negative", summary.negative, summary.n_negative),
            ] {
                w.write_record([
                    summary.node.to_string(),
                    panel.labels[summary.node].clone(),
                    class.to_string(),
                    format!("{:.10}", quartiles[0]),
                    format!("{:.10}", quartiles[1]),
                    format!("{:.10}", quartiles[2]),
                    count.to_string(),
                ])?;
            }
        }
        w.flush()?;

        let grid = diagnostics::corbit_grid(&variance, &topology, h_max, r_max)?;
        let mut w = csv::Writer::from_path(out.join("corbit.csv"))?;
        w.write_record(["h", "r", "nvacf", "lambda"])?;
        for h in 1..=grid.h_max {
            for r in 1..=grid.r_max {
                w.write_record([
                    h.to_string(),
                    r.to_string(),
                    format!("{:.10}", grid.values[(h - 1, r - 1)]),
                    format!("{:.10}", grid.lambda),
                ])?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn varma_check(
    panel_path: &Path,
    variance_path: &Path,
    cov_trace_path: &Path,
    graph_path: &Path,
    params_path: &Path,
    out: &Path,
    dump_transfer: Option<&Path>,
) -> Result<()> {
    let panel = io::read_panel_csv(panel_path)?;
    let variance = io::read_panel_csv(variance_path)?;
    let cov_trace = io::read_cov_trace_csv(cov_trace_path)?;
    let topology = io::read_graph_csv(graph_path)?;
    let (orders, params) = load_model_params(params_path)?;
    let masks = NetworkMasks::build(&topology, orders.max_stage())?;
    let transfer = varma::build_transfer(&params, &orders, &masks)?;
    let (var_resid, cov_resid) =
        varma::verify_varma_identity(&panel.values, &variance.values, &cov_trace, &transfer)?;
    if let Some(dir) = dump_transfer {
        ensure_dir(dir)?;
        let dump = |name: &str, m: &DMatrix<f64>| -> Result<()> {
            let mut w = csv::Writer::from_path(dir.join(name))?;
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
                w.write_record(&row)?;
            }
            w.flush()?;
            Ok(())
        };
        for (k, phi) in transfer.phi.iter().enumerate() {
            dump(&format!("phi{}.csv", k + 1), phi)?;
        }
        for (l, theta) in transfer.theta.iter().enumerate() {
            dump(&format!("theta{}.csv", l + 1), theta)?;
        }
        for (m, psi) in transfer.psi.iter().enumerate() {
            dump(&format!("psi{}.csv", m + 1), psi)?;
        }
        for (r, t_r) in &transfer.t_r {
            dump(&format!("t{r}.csv"), &t_r.to_dense())?;
        }
    }
    io::write_json(
        out,
        &serde_json::json!({
            "variance_residual": var_resid,
            "covariance_residual": cov_resid,
        }),
    )?;
    println!("variance-form residual:   {var_resid:.3e}");
    println!("covariance-form residual: {cov_resid:.3e}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn compare(
    data: &Path,
    graph: &Path,
    params_path: &Path,
    lambda: f64,
    window: usize,
    garch_epochs: usize,
    out: &Path,
    verbose: bool,
) -> Result<()> {
    let panel = io::read_panel_csv(data)?;
    let topology = io::read_graph_csv(graph)?;
    let (orders, params) = load_model_params(params_path)?;
    let d = panel.node_count();
    let t_len = panel.len();

    let gngarch_var = estimate::fitted_variance_matrix(&params, &orders, &topology, &panel)?;
    let rescaled = estimate::rescale_variance(&gngarch_var, &panel, window)?;
    let riskmetrics = estimate::riskmetrics(&panel, lambda)?;

    let garch_config = FitConfig { epochs: garch_epochs, ..FitConfig::default() };
    let uni_topology = NetworkTopology::new(1, &[])?;
    let uni_orders = OrderSpec::new(1, 1, vec![0], vec![0])?;
    let mut uni_var = DMatrix::zeros(d, t_len);
    for i in 0..d {
        if verbose {
            eprintln!("fitting univariate GARCH benchmark for node {i}");
        }
        let series = panel.series(i);
        let report = estimate::fit_univariate_garch(&series, &garch_config)?;
        let node_panel =
            ReturnPanel::from_values(DMatrix::from_row_slice(1, t_len, &series))?;
        let fitted = estimate::fitted_variance_matrix(
            &report.theta_hat,
            &uni_orders,
            &uni_topology,
            &node_panel,
        )?;
        uni_var.set_row(i, &fitted.row(0).into_owned());
    }

    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["time", "node", "label", "proxy", "gngarch_rescaled", "riskmetrics", "uni_garch"])?;
    for t in 0..t_len {
        for i in 0..d {
            let r = panel.values[(i, t)];
            w.write_record([
                panel.times[t].clone(),
                i.to_string(),
                panel.labels[i].clone(),
                format!("{:.10e}", r * r),
                format!("{:.10e}", rescaled[(i, t)]),
                format!("{:.10e}", riskmetrics[(i, t)]),
                format!("{:.10e}", uni_var[(i, t)]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
