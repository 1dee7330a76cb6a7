//! Loss functions and gradient-based parameter estimation.
//!
//! The latent conditional variance is proxied by squared returns; fitting
//! minimises MSE, QLIKE or the Gaussian NLL over the model-implied trace
//! with the Adam optimizer. Gradients come from central finite differences
//! over the handful of free parameters: one loss evaluation is O(T d²), so
//! the 2n extra evaluations per step are affordable and avoid hand-deriving
//! the recursion adjoint.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GngarchError, Result};
use crate::graph::{NetworkMasks, NetworkTopology};
use crate::model::{self, make_pd, simulate, SimulationConfig, EPS_PD};
use crate::panel::ReturnPanel;
use crate::params::{GlobalParams, OrderSpec, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Qlike,
    Nll,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Mse => write!(f, "mse"),
            LossKind::Qlike => write!(f, "qlike"),
            LossKind::Nll => write!(f, "nll"),
        }
    }
}

/// Optimizer settings. Defaults follow the reference protocol: Adam with
/// learning rate 0.01 over 500 epochs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Relative central-difference step: `grad_step * max(1, |θ_i|)`.
    pub grad_step: f64,
    /// Feasibility floor for alpha0 after projection.
    pub param_floor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Nll,
            epochs: 500,
            lr: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            grad_step: 1e-5,
            param_floor: 1e-6,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(GngarchError::Invalid("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(GngarchError::Invalid("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome of one fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub theta_hat: GlobalParams,
    pub loss_curve: Vec<f64>,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub loss_kind: LossKind,
    /// PD repairs needed while evaluating the loss at the final iterate.
    pub pd_repairs: usize,
    /// Set when the fitted coefficient sum breaches the sufficient
    /// stationarity bound.
    pub stationarity_warning: bool,
}

fn check_alignment(panel: &ReturnPanel, trace_len: usize) -> Result<usize> {
    let t_len = panel.len();
    if t_len < 2 || trace_len != t_len - 1 {
        return Err(GngarchError::Dimension(format!(
            "trace of length {trace_len} does not align with a {t_len}-step panel (need T-1)"
        )));
    }
    Ok(t_len)
}

/// MSE between the squared-return proxy and the conditional covariance
/// trace: `(1/(T-1)) Σ_t d⁻² Σ_ij (X_tX_tᵀ - Σ̂_t)²_ij` with `Σ̂_t` aligned
/// to `X_t` (trace entry `t-1` predicts panel column `t`).
pub fn loss_mse(panel: &ReturnPanel, sigma_trace: &[DMatrix<f64>]) -> Result<f64> {
    let t_len = check_alignment(panel, sigma_trace.len())?;
    let d = panel.node_count();
    let norm = 1.0 / (d * d) as f64;
    let mut total = 0.0;
    for t in 1..t_len {
        let x = panel.values.column(t);
        let sigma = &sigma_trace[t - 1];
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                let e = x[i] * x[j] - sigma[(i, j)];
                acc += e * e;
            }
        }
        total += norm * acc;
    }
    Ok(total / (t_len - 1) as f64)
}

fn qlike_with_repairs(panel: &ReturnPanel, sigma_trace: &[DMatrix<f64>]) -> Result<(f64, usize)> {
    let t_len = check_alignment(panel, sigma_trace.len())?;
    let mut total = 0.0;
    let mut repairs = 0usize;
    for t in 1..t_len {
        let (pd, repaired) = make_pd(&sigma_trace[t - 1], EPS_PD)?;
        if repaired {
            repairs += 1;
        }
        let chol = Cholesky::new(pd).ok_or_else(|| {
            GngarchError::Numeric(format!("Σ̂ at t={t} is not positive definite after repair"))
        })?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let x = panel.values.column(t).into_owned();
        let y = chol.l().solve_lower_triangular(&x).ok_or_else(|| {
            GngarchError::Numeric(format!("triangular solve failed at t={t}"))
        })?;
        total += log_det + y.norm_squared();
    }
    Ok((total / (t_len - 1) as f64, repairs))
}

/// QLIKE loss `(1/(T-1)) Σ_t (log|Σ̂_t| + X_tᵀ Σ̂_t⁻¹ X_t)`, computed via a
/// triangular factorization of the (PD-repaired) trace.
pub fn loss_qlike(panel: &ReturnPanel, sigma_trace: &[DMatrix<f64>]) -> Result<f64> {
    qlike_with_repairs(panel, sigma_trace).map(|(v, _)| v)
}

/// Averaged Gaussian negative log-likelihood; differs from QLIKE by the
/// affine map `NLL = ½ QLIKE + (d/2) log 2π`.
pub fn loss_nll(panel: &ReturnPanel, sigma_trace: &[DMatrix<f64>]) -> Result<f64> {
    let d = panel.node_count() as f64;
    let qlike = loss_qlike(panel, sigma_trace)?;
    Ok(0.5 * qlike + 0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

pub fn evaluate_loss(
    panel: &ReturnPanel,
    sigma_trace: &[DMatrix<f64>],
    kind: LossKind,
) -> Result<f64> {
    match kind {
        LossKind::Mse => loss_mse(panel, sigma_trace),
        LossKind::Qlike => loss_qlike(panel, sigma_trace),
        LossKind::Nll => loss_nll(panel, sigma_trace),
    }
}

/// Loss at a raw parameter vector. No feasibility validation: the finite
/// difference probes step slightly outside the constraint cone, and the
/// QLIKE/NLL path repairs any non-PD trace entry.
fn objective(
    theta: &[f64],
    orders: &OrderSpec,
    masks: &NetworkMasks,
    panel: &ReturnPanel,
    kind: LossKind,
) -> Result<f64> {
    let params = GlobalParams::from_vec(orders, theta)?;
    let trace = model::model_trace(&ParamSet::Global(params), orders, masks, panel)?;
    evaluate_loss(panel, &trace.sigma, kind)
}

fn central_fd_gradient(
    theta: &[f64],
    step_rel: f64,
    mut f: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; theta.len()];
    let mut probe = theta.to_vec();
    for i in 0..theta.len() {
        let h = step_rel * theta[i].abs().max(1.0);
        probe[i] = theta[i] + h;
        let up = f(&probe)?;
        probe[i] = theta[i] - h;
        let down = f(&probe)?;
        probe[i] = theta[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(GngarchError::Numeric(format!(
                "loss is not finite near parameter {i} (f+ = {up}, f- = {down})"
            )));
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Gradient of the chosen loss with respect to the flattened parameter
/// vector `(alpha0, alpha.., gamma.., beta.., delta..)`, by central finite
/// differences with step `1e-5 * max(1, |θ_i|)`.
pub fn loss_gradient(
    params: &GlobalParams,
    orders: &OrderSpec,
    topology: &NetworkTopology,
    panel: &ReturnPanel,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let masks = NetworkMasks::build(topology, orders.max_stage())?;
    let theta = params.to_vec();
    let at_theta = objective(&theta, orders, &masks, panel, kind)?;
    if !at_theta.is_finite() {
        return Err(GngarchError::Numeric(format!("loss is not finite at the given parameters ({at_theta})")));
    }
    central_fd_gradient(&theta, 1e-5, |t| objective(t, orders, &masks, panel, kind))
}

/// Adam minimisation of the chosen loss with post-step projection onto the
/// feasible set (coefficients clipped at 0, alpha0 floored). Deterministic
/// given the data and the initial point.
pub fn fit(
    panel: &ReturnPanel,
    orders: &OrderSpec,
    topology: &NetworkTopology,
    config: &FitConfig,
    init: &GlobalParams,
) -> Result<FitReport> {
    config.validate()?;
    init.validate(orders)?;
    if panel.len() <= orders.max_lag() {
        return Err(GngarchError::InsufficientHistory {
            needed: orders.max_lag() + 1,
            got: panel.len(),
        });
    }
    let masks = NetworkMasks::build(topology, orders.max_stage())?;
    let eval = |theta: &[f64]| objective(theta, orders, &masks, panel, config.loss);

    let mut theta = init.to_vec();
    let n = theta.len();
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;

    for epoch in 1..=config.epochs {
        let grad = central_fd_gradient(&theta, config.grad_step, eval)?;
        let bias1 = 1.0 - config.adam_beta1.powi(epoch as i32);
        let bias2 = 1.0 - config.adam_beta2.powi(epoch as i32);
        for i in 0..n {
            m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * grad[i];
            v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            theta[i] -= config.lr * m_hat / (v_hat.sqrt() + config.adam_eps);
            theta[i] = theta[i].max(0.0);
        }
        theta[0] = theta[0].max(config.param_floor);

        let loss_now = eval(&theta)?;
        if !loss_now.is_finite() {
            return Err(GngarchError::Numeric(format!(
                "loss diverged to {loss_now} at epoch {epoch}"
            )));
        }
        best = best.min(loss_now);
        loss_curve.push(loss_now);
    }

    let final_grad = central_fd_gradient(&theta, config.grad_step, eval)?;
    let final_grad_norm = final_grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let theta_hat = GlobalParams::from_vec(orders, &theta)?;
    let final_loss = *loss_curve.last().expect("epochs >= 1");
    let converged = final_loss - best <= 1e-8;

    let trace = model::model_trace(&ParamSet::Global(theta_hat.clone()), orders, &masks, panel)?;
    let pd_repairs = match config.loss {
        LossKind::Mse => 0,
        LossKind::Qlike | LossKind::Nll => qlike_with_repairs(panel, &trace.sigma)?.1,
    };

    Ok(FitReport {
        stationarity_warning: theta_hat.coefficient_sum() >= 1.0,
        theta_hat,
        loss_curve,
        converged,
        final_grad_norm,
        loss_kind: config.loss,
        pd_repairs,
    })
}

/// Per-seed outcome of a replication run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRun {
    pub seed: u64,
    pub estimate: Option<Vec<f64>>,
    pub error: Option<String>,
}

/// Simulate-and-refit summary across seeds: per-parameter sample mean and
/// standard deviation of the estimates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub runs: Vec<ReplicationRun>,
    pub loss_kind: LossKind,
}

/// For each seed: simulate a path from `true_params` under `sim`, refit from
/// the default initial point, and summarise the estimates. Individual seed
/// failures are recorded, not fatal. Seeds run concurrently.
pub fn replicate_fit(
    orders: &OrderSpec,
    topology: &NetworkTopology,
    true_params: &GlobalParams,
    seeds: &[u64],
    config: &FitConfig,
    sim: &SimulationConfig,
) -> Result<ReplicationSummary> {
    if seeds.len() < 2 {
        return Err(GngarchError::Invalid("replication needs at least 2 seeds".into()));
    }
    true_params.validate(orders)?;
    let init = default_init(orders);
    let runs: Vec<ReplicationRun> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = sim.clone();
            cfg.seed = seed;
            let result = simulate(&ParamSet::Global(true_params.clone()), orders, topology, &cfg)
                .and_then(|out| fit(&out.returns, orders, topology, config, &init));
            match result {
                Ok(report) => ReplicationRun {
                    seed,
                    estimate: Some(report.theta_hat.to_vec()),
                    error: None,
                },
                Err(e) => ReplicationRun { seed, estimate: None, error: Some(e.to_string()) },
            }
        })
        .collect();

    let n_params = orders.param_count();
    let ok: Vec<&Vec<f64>> = runs.iter().filter_map(|r| r.estimate.as_ref()).collect();
    if ok.len() < 2 {
        return Err(GngarchError::Numeric(format!(
            "only {} of {} replications succeeded",
            ok.len(),
            seeds.len()
        )));
    }
    let mut means = vec![0.0; n_params];
    for est in &ok {
        for (i, &v) in est.iter().enumerate() {
            means[i] += v;
        }
    }
    for m in means.iter_mut() {
        *m /= ok.len() as f64;
    }
    let mut sds = vec![0.0; n_params];
    for est in &ok {
        for (i, &v) in est.iter().enumerate() {
            sds[i] += (v - means[i]).powi(2);
        }
    }
    for s in sds.iter_mut() {
        *s = (*s / (ok.len() - 1) as f64).sqrt();
    }

    Ok(ReplicationSummary {
        names: GlobalParams::names(orders),
        truth: true_params.to_vec(),
        means,
        sds,
        runs,
        loss_kind: config.loss,
    })
}

/// Default optimizer starting point, inside the stationarity region:
/// alpha0 = 0.05, alphas 0.10, gammas 0.50, betas/deltas 0.01.
pub fn default_init(orders: &OrderSpec) -> GlobalParams {
    GlobalParams {
        alpha0: 0.05,
        alpha: vec![0.10; orders.q],
        gamma: vec![0.50; orders.p],
        beta: orders.s.iter().map(|&n| vec![0.01; n]).collect(),
        delta: orders.rp.iter().map(|&n| vec![0.01; n]).collect(),
    }
}

/// Align fitted conditional variances to the level of squared returns with
/// a trailing rolling window (the first `window` steps reuse the first
/// window's ratio).
pub fn rescale_variance(
    fitted_diag: &DMatrix<f64>,
    panel: &ReturnPanel,
    window: usize,
) -> Result<DMatrix<f64>> {
    let d = fitted_diag.nrows();
    let t_len = fitted_diag.ncols();
    if panel.node_count() != d || panel.len() != t_len {
        return Err(GngarchError::Dimension("fitted variances do not align with the panel".into()));
    }
    if window < 1 {
        return Err(GngarchError::Invalid("window must be >= 1".into()));
    }
    if t_len < window {
        return Err(GngarchError::Invalid(format!(
            "panel of length {t_len} is shorter than the rescaling window {window}"
        )));
    }
    let mut out = DMatrix::zeros(d, t_len);
    for i in 0..d {
        // Prefix sums of r² and σ̂ along time.
        let mut r2_prefix = vec![0.0; t_len + 1];
        let mut sg_prefix = vec![0.0; t_len + 1];
        for t in 0..t_len {
            let r = panel.values[(i, t)];
            r2_prefix[t + 1] = r2_prefix[t] + r * r;
            sg_prefix[t + 1] = sg_prefix[t] + fitted_diag[(i, t)];
        }
        let ratio = |lo: usize, hi: usize| -> Result<f64> {
            let num = r2_prefix[hi] - r2_prefix[lo];
            let den = sg_prefix[hi] - sg_prefix[lo];
            if den == 0.0 {
                return Err(GngarchError::Numeric(format!(
                    "zero rolling mean of fitted variance for node {i}"
                )));
            }
            Ok(num / den)
        };
        let head = ratio(0, window)?;
        for t in 0..t_len {
            let c = if t + 1 >= window { ratio(t + 1 - window, t + 1)? } else { head };
            out[(i, t)] = c * fitted_diag[(i, t)];
        }
    }
    Ok(out)
}

/// Exponentially weighted moving-average variance:
/// `σ²_t = λ σ²_{t-1} + (1-λ) r²_{t-1}`, initialised at the sample variance
/// of the first (up to 252-step) window.
pub fn riskmetrics(panel: &ReturnPanel, lambda: f64) -> Result<DMatrix<f64>> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(GngarchError::Invalid(format!("lambda {lambda} outside (0, 1)")));
    }
    let d = panel.node_count();
    let t_len = panel.len();
    let init_window = t_len.min(252);
    let mut out = DMatrix::zeros(d, t_len);
    for i in 0..d {
        let series = panel.values.row(i);
        let init = if init_window >= 2 {
            let mean: f64 = series.columns(0, init_window).sum() / init_window as f64;
            series
                .columns(0, init_window)
                .iter()
                .map(|r| (r - mean) * (r - mean))
                .sum::<f64>()
                / (init_window - 1) as f64
        } else {
            series[0] * series[0]
        };
        out[(i, 0)] = init;
        for t in 1..t_len {
            let r = series[t - 1];
            out[(i, t)] = lambda * out[(i, t - 1)] + (1.0 - lambda) * r * r;
        }
    }
    Ok(out)
}

/// Univariate GARCH(p, q) fit: the one-node, no-network special case of
/// [`fit`] with the beta/delta blocks absent.
pub fn fit_univariate_garch(series: &[f64], config: &FitConfig) -> Result<FitReport> {
    let topology = NetworkTopology::new(1, &[])?;
    let orders = OrderSpec::new(1, 1, vec![0], vec![0])?;
    let values = DMatrix::from_row_slice(1, series.len(), series);
    let panel = ReturnPanel::from_values(values)?;
    let init = default_init(&orders);
    fit(&panel, &orders, &topology, config, &init)
}

/// Convenience: the model-implied conditional variance matrix (d x T) over a
/// panel, with column t holding h_t. Column 0 is the pre-sample level
/// alpha0 so the output aligns with the panel.
pub fn fitted_variance_matrix(
    params: &GlobalParams,
    orders: &OrderSpec,
    topology: &NetworkTopology,
    panel: &ReturnPanel,
) -> Result<DMatrix<f64>> {
    let masks = NetworkMasks::build(topology, orders.max_stage())?;
    let trace = model::model_trace(&ParamSet::Global(params.clone()), orders, &masks, panel)?;
    let d = panel.node_count();
    let mut m = DMatrix::zeros(d, panel.len());
    m.set_column(0, &DVector::from_element(d, params.alpha0));
    for (k, h) in trace.h.iter().enumerate() {
        m.set_column(k + 1, h);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamSet;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cycle5() -> NetworkTopology {
        NetworkTopology::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]).unwrap()
    }

    fn true_params() -> GlobalParams {
        GlobalParams::one_one(0.05, 0.20, 0.60, 0.05, 0.05)
    }

    fn random_pd(rng: &mut impl Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.5..0.5));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.5
    }

    fn random_panel(rng: &mut impl Rng, d: usize, t_len: usize) -> ReturnPanel {
        let values = DMatrix::from_fn(d, t_len, |_, _| rng.random_range(-1.0..1.0));
        ReturnPanel::from_values(values).unwrap()
    }

    #[test]
    fn mse_zero_on_perfect_proxy_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let panel = random_panel(&mut rng, 3, 8);
        let trace: Vec<DMatrix<f64>> = (1..8)
            .map(|t| {
                let x = panel.values.column(t).into_owned();
                &x * x.transpose()
            })
            .collect();
        assert_eq!(loss_mse(&panel, &trace).unwrap(), 0.0);
    }

    #[test]
    fn mse_single_step_scalar() {
        let panel =
            ReturnPanel::from_values(DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).unwrap();
        let trace = vec![DMatrix::from_element(1, 1, 2.0)];
        assert_relative_eq!(loss_mse(&panel, &trace).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn mse_matches_quadruple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 4;
        let t_len = 12;
        let panel = random_panel(&mut rng, d, t_len);
        let trace: Vec<DMatrix<f64>> = (1..t_len).map(|_| random_pd(&mut rng, d)).collect();
        let got = loss_mse(&panel, &trace).unwrap();
        let mut want = 0.0;
        for t in 1..t_len {
            for i in 0..d {
                for j in 0..d {
                    let e = panel.values[(i, t)] * panel.values[(j, t)] - trace[t - 1][(i, j)];
                    want += e * e / (d * d) as f64;
                }
            }
        }
        want /= (t_len - 1) as f64;
        assert_relative_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn qlike_scalar_values() {
        let panel =
            ReturnPanel::from_values(DMatrix::from_row_slice(1, 2, &[0.3, 0.0])).unwrap();
        let unit = vec![DMatrix::from_element(1, 1, 1.0)];
        assert_relative_eq!(loss_qlike(&panel, &unit).unwrap(), 0.0, epsilon = 1e-15);
        let e = vec![DMatrix::from_element(1, 1, std::f64::consts::E)];
        assert_relative_eq!(loss_qlike(&panel, &e).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(
            loss_nll(&panel, &unit).unwrap(),
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn qlike_nll_affine_identity_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let d = rng.random_range(1usize..6);
            let t_len = rng.random_range(3usize..12);
            let panel = random_panel(&mut rng, d, t_len);
            let trace: Vec<DMatrix<f64>> = (1..t_len).map(|_| random_pd(&mut rng, d)).collect();
            let qlike = loss_qlike(&panel, &trace).unwrap();
            let nll = loss_nll(&panel, &trace).unwrap();
            let offset = 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
            assert!((nll - 0.5 * qlike - offset).abs() < 1e-10);
        }
    }

    #[test]
    fn nll_additive_over_split_panels() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = 3;
        let t_len = 11;
        let panel = random_panel(&mut rng, d, t_len);
        let trace: Vec<DMatrix<f64>> = (1..t_len).map(|_| random_pd(&mut rng, d)).collect();
        let whole = loss_nll(&panel, &trace).unwrap();
        let k = 6usize;
        let first = ReturnPanel::from_values(panel.values.columns(0, k + 1).into_owned()).unwrap();
        let second =
            ReturnPanel::from_values(panel.values.columns(k, t_len - k).into_owned()).unwrap();
        let loss_a = loss_nll(&first, &trace[..k]).unwrap();
        let loss_b = loss_nll(&second, &trace[k..]).unwrap();
        let n_a = k as f64;
        let n_b = (t_len - 1 - k) as f64;
        let recombined = (n_a * loss_a + n_b * loss_b) / (n_a + n_b);
        assert_relative_eq!(whole, recombined, epsilon = 1e-12);
    }

    #[test]
    fn losses_reject_misaligned_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let panel = random_panel(&mut rng, 2, 6);
        let trace: Vec<DMatrix<f64>> = (0..3).map(|_| random_pd(&mut rng, 2)).collect();
        assert!(loss_mse(&panel, &trace).is_err());
        assert!(loss_qlike(&panel, &trace).is_err());
    }

    /// Five-point-stencil finite differences at a different step size: an
    /// independent route to the same derivative.
    fn stencil_gradient(
        theta: &[f64],
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Vec<f64> {
        let mut grad = vec![0.0; theta.len()];
        let mut probe = theta.to_vec();
        for i in 0..theta.len() {
            let h = 1e-4 * theta[i].abs().max(1.0);
            let mut value = 0.0;
            for (offset, weight) in
                [(-2.0, 1.0 / 12.0), (-1.0, -8.0 / 12.0), (1.0, 8.0 / 12.0), (2.0, -1.0 / 12.0)]
            {
                probe[i] = theta[i] + offset * h;
                value += weight * f(&probe);
            }
            probe[i] = theta[i];
            grad[i] = value / h;
        }
        grad
    }

    #[test]
    fn gradient_agrees_with_stencil_oracle() {
        // MSE is smooth everywhere; QLIKE/NLL is only smooth where the
        // trace needs no PD repair, so its instances use low-dimensional
        // models whose traces stay positive definite.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let orders = OrderSpec::one_one();

        let check = |topo: &NetworkTopology,
                     params: &GlobalParams,
                     panel: &ReturnPanel,
                     kind: LossKind| {
            let masks = NetworkMasks::build(topo, orders.max_stage()).unwrap();
            let grad = loss_gradient(params, &orders, topo, panel, kind).unwrap();
            let theta = params.to_vec();
            let oracle = stencil_gradient(&theta, |t| {
                let p = GlobalParams::from_vec(&orders, t).unwrap();
                let trace =
                    crate::model::model_trace(&ParamSet::Global(p), &orders, &masks, panel)
                        .unwrap();
                evaluate_loss(panel, &trace.sigma, kind).unwrap()
            });
            for (g, o) in grad.iter().zip(&oracle) {
                assert!(
                    (g - o).abs() <= 1e-4 * o.abs().max(1e-2),
                    "{kind}: {g} vs oracle {o}"
                );
            }
        };

        let net5 = cycle5();
        for trial in 0..3 {
            let sim = simulate(
                &ParamSet::Global(true_params()),
                &orders,
                &net5,
                &SimulationConfig::new(60, 100 + trial),
            )
            .unwrap();
            let params = GlobalParams::one_one(
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.4),
                rng.random_range(0.3..0.6),
                rng.random_range(0.0..0.1),
                rng.random_range(0.0..0.1),
            );
            check(&net5, &params, &sim.returns, LossKind::Mse);
        }

        let net2 = NetworkTopology::new(2, &[(0, 1)]).unwrap();
        let masks2 = NetworkMasks::build(&net2, 1).unwrap();
        for trial in 0..3 {
            let sim = simulate(
                &ParamSet::Global(true_params()),
                &orders,
                &net2,
                &SimulationConfig::new(60, 200 + trial),
            )
            .unwrap();
            let params = GlobalParams::one_one(
                rng.random_range(0.05..0.2),
                rng.random_range(0.05..0.4),
                rng.random_range(0.3..0.6),
                rng.random_range(0.0..0.1),
                rng.random_range(0.0..0.1),
            );
            let trace = crate::model::model_trace(
                &ParamSet::Global(params.clone()),
                &orders,
                &masks2,
                &sim.returns,
            )
            .unwrap();
            let repairs = qlike_with_repairs(&sim.returns, &trace.sigma).unwrap().1;
            assert_eq!(repairs, 0, "two-node instance unexpectedly needs repair");
            check(&net2, &params, &sim.returns, LossKind::Nll);
        }
    }

    #[test]
    fn gradient_vanishes_at_analytic_minimum() {
        // h_t = alpha0 + alpha1 X²_{t-1} at d=1 makes MSE an OLS problem on
        // (1, X²_{t-1}); the gradient at the normal-equation solution must
        // vanish.
        let topo = NetworkTopology::new(1, &[]).unwrap();
        let orders = OrderSpec::new(0, 1, vec![0], vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t_len = 60;
        let mut x = vec![0.0; t_len];
        for t in 0..t_len {
            // Blocks of persistent volatility give the squares a positive
            // lag-1 dependence, keeping the OLS minimiser feasible.
            let scale = if (t / 10) % 2 == 0 { 0.4 } else { 1.2 };
            x[t] = scale * rng.random_range(-1.0..1.0f64);
        }
        let panel =
            ReturnPanel::from_values(DMatrix::from_row_slice(1, t_len, &x)).unwrap();
        // OLS of y_t = X_t² on (1, X_{t-1}²), t = 1..T-1.
        let n = (t_len - 1) as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for t in 1..t_len {
            let xi = x[t - 1] * x[t - 1];
            let yi = x[t] * x[t];
            sx += xi;
            sy += yi;
            sxx += xi * xi;
            sxy += xi * yi;
        }
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        let intercept = (sy - slope * sx) / n;
        assert!(slope > 0.0 && intercept > 0.0, "fixture must be in the feasible set");
        let params = GlobalParams {
            alpha0: intercept,
            alpha: vec![slope],
            gamma: vec![],
            beta: vec![vec![]],
            delta: vec![],
        };
        let grad = loss_gradient(&params, &orders, &topo, &panel, LossKind::Mse).unwrap();
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "gradient at the minimum is {norm}");
    }

    #[test]
    fn mse_alpha0_gradient_matches_hand_expression() {
        // With alpha1 = gamma1 = 0 the trace is constant alpha0 and
        // dMSE/dalpha0 = 2 (alpha0 - mean X_t²).
        let topo = NetworkTopology::new(1, &[]).unwrap();
        let orders = OrderSpec::new(1, 1, vec![0], vec![0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t_len = 50;
        let values = DMatrix::from_fn(1, t_len, |_, _| rng.random_range(-1.0..1.0));
        let panel = ReturnPanel::from_values(values).unwrap();
        let alpha0 = 0.3;
        let params = GlobalParams {
            alpha0,
            alpha: vec![0.0],
            gamma: vec![0.0],
            beta: vec![vec![]],
            delta: vec![vec![]],
        };
        let grad = loss_gradient(&params, &orders, &topo, &panel, LossKind::Mse).unwrap();
        let mean_sq: f64 =
            (1..t_len).map(|t| panel.values[(0, t)].powi(2)).sum::<f64>() / (t_len - 1) as f64;
        assert_relative_eq!(grad[0], 2.0 * (alpha0 - mean_sq), epsilon = 1e-8);
    }

    #[test]
    fn fit_is_deterministic_and_decreases_loss() {
        let topo = cycle5();
        let orders = OrderSpec::one_one();
        let sim = simulate(
            &ParamSet::Global(true_params()),
            &orders,
            &topo,
            &SimulationConfig::new(400, 5),
        )
        .unwrap();
        let config = FitConfig { epochs: 40, ..FitConfig::default() };
        let init = default_init(&orders);
        let a = fit(&sim.returns, &orders, &topo, &config, &init).unwrap();
        let b = fit(&sim.returns, &orders, &topo, &config, &init).unwrap();
        assert_eq!(a.theta_hat, b.theta_hat);
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.loss_curve.len(), 40);
        assert!(a.loss_curve.last().unwrap() < a.loss_curve.first().unwrap());
        assert!(a.theta_hat.validate(&orders).is_ok());
        assert!(!a.stationarity_warning);
    }

    #[test]
    fn fit_network_coefs_stay_small_on_edgeless_graph() {
        let topo = NetworkTopology::new(3, &[]).unwrap();
        let orders = OrderSpec::one_one();
        let params = ParamSet::Global(GlobalParams::one_one(0.05, 0.2, 0.6, 0.0, 0.0));
        let sim = simulate(&params, &orders, &topo, &SimulationConfig::new(1000, 6)).unwrap();
        let config = FitConfig { epochs: 120, ..FitConfig::default() };
        let report = fit(&sim.returns, &orders, &topo, &config, &default_init(&orders)).unwrap();
        assert!(report.theta_hat.beta[0][0] <= 0.05);
        assert!(report.theta_hat.delta[0][0] <= 0.05);
    }

    #[test]
    fn replicate_matches_single_fit_bitwise() {
        let topo = cycle5();
        let orders = OrderSpec::one_one();
        let config = FitConfig { epochs: 25, ..FitConfig::default() };
        let sim_config = SimulationConfig::new(300, 0);
        let summary = replicate_fit(
            &orders,
            &topo,
            &true_params(),
            &[11, 12],
            &config,
            &sim_config,
        )
        .unwrap();
        assert_eq!(summary.runs.len(), 2);
        let mut solo_config = sim_config.clone();
        solo_config.seed = 11;
        let solo_sim =
            simulate(&ParamSet::Global(true_params()), &orders, &topo, &solo_config).unwrap();
        let solo =
            fit(&solo_sim.returns, &orders, &topo, &config, &default_init(&orders)).unwrap();
        assert_eq!(summary.runs[0].estimate.as_ref().unwrap(), &solo.theta_hat.to_vec());
        assert!(summary.sds.iter().all(|s| s.is_finite()));
    }

    #[test]
    fn replicate_needs_two_seeds() {
        let topo = cycle5();
        let orders = OrderSpec::one_one();
        assert!(replicate_fit(
            &orders,
            &topo,
            &true_params(),
            &[0],
            &FitConfig::default(),
            &SimulationConfig::new(100, 0)
        )
        .is_err());
    }

    #[test]
    fn rescale_identity_and_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 2;
        let t_len = 30;
        let panel = random_panel(&mut rng, d, t_len);
        let squared = DMatrix::from_fn(d, t_len, |i, t| panel.values[(i, t)].powi(2));
        let out = rescale_variance(&squared, &panel, 7).unwrap();
        assert_relative_eq!((&out - &squared).abs().max(), 0.0, epsilon = 1e-12);
        let doubled = &squared * 2.0;
        let out = rescale_variance(&doubled, &panel, 7).unwrap();
        assert_relative_eq!((&out - &squared).abs().max(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rescale_matches_rolling_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = 3;
        let t_len = 40;
        let window = 9;
        let panel = random_panel(&mut rng, d, t_len);
        let fitted = DMatrix::from_fn(d, t_len, |_, _| rng.random_range(0.05..1.5));
        let got = rescale_variance(&fitted, &panel, window).unwrap();
        for i in 0..d {
            for t in 0..t_len {
                let (lo, hi) = if t + 1 >= window { (t + 1 - window, t + 1) } else { (0, window) };
                let mut num = 0.0;
                let mut den = 0.0;
                for s in lo..hi {
                    num += panel.values[(i, s)].powi(2);
                    den += fitted[(i, s)];
                }
                assert_relative_eq!(got[(i, t)], fitted[(i, t)] * num / den, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rescale_rejects_zero_fit() {
        let panel = ReturnPanel::from_values(DMatrix::from_element(1, 10, 0.5)).unwrap();
        let fitted = DMatrix::zeros(1, 10);
        assert!(rescale_variance(&fitted, &panel, 5).is_err());
    }

    #[test]
    fn riskmetrics_recursion_values() {
        // First-window sample variance of (0, 1, -1) is 1, so the recursion
        // starts at 1 with r_0 = 0.
        let panel =
            ReturnPanel::from_values(DMatrix::from_row_slice(1, 3, &[0.0, 1.0, -1.0])).unwrap();
        let out = riskmetrics(&panel, 0.94).unwrap();
        assert_relative_eq!(out[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(out[(0, 1)], 0.94, epsilon = 1e-15);
        assert_relative_eq!(out[(0, 2)], 0.94 * 0.94 + 0.06, epsilon = 1e-15);
    }

    #[test]
    fn riskmetrics_constant_fixed_point_and_freeze() {
        let c = 0.7;
        let panel = ReturnPanel::from_values(DMatrix::from_element(1, 2000, c)).unwrap();
        let out = riskmetrics(&panel, 0.94).unwrap();
        assert_relative_eq!(out[(0, 1999)], c * c, max_relative = 1e-10);
        let frozen = riskmetrics(&panel, 0.999_999_9).unwrap();
        assert_relative_eq!(frozen[(0, 1999)], out[(0, 0)], epsilon = 1e-4);
        assert!(riskmetrics(&panel, 1.0).is_err());
    }

    #[test]
    fn univariate_fit_recovers_scalar_garch() {
        let topo = NetworkTopology::new(1, &[]).unwrap();
        let orders = OrderSpec::new(1, 1, vec![0], vec![0]).unwrap();
        let params = GlobalParams {
            alpha0: 0.05,
            alpha: vec![0.2],
            gamma: vec![0.6],
            beta: vec![vec![]],
            delta: vec![vec![]],
        };
        let sim = simulate(
            &ParamSet::Global(params),
            &orders,
            &topo,
            &SimulationConfig::new(5000, 0),
        )
        .unwrap();
        let report =
            fit_univariate_garch(&sim.returns.series(0), &FitConfig::default()).unwrap();
        let est = report.theta_hat;
        assert!((est.alpha0 - 0.05).abs() <= 0.1, "alpha0 = {}", est.alpha0);
        assert!((est.alpha[0] - 0.2).abs() <= 0.1, "alpha1 = {}", est.alpha[0]);
        assert!((est.gamma[0] - 0.6).abs() <= 0.1, "gamma1 = {}", est.gamma[0]);
    }

    #[test]
    fn univariate_fit_constant_series_level() {
        let c = 0.3;
        let series = vec![c; 600];
        let report = fit_univariate_garch(&series, &FitConfig::default()).unwrap();
        let est = &report.theta_hat;
        // Any minimiser puts the long-run level at the constant squared
        // return.
        let level = (est.alpha0 + est.alpha[0] * c * c) / (1.0 - est.gamma[0]);
        assert_relative_eq!(level, c * c, max_relative = 0.1);
    }
}
