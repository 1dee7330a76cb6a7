//! The GNGARCH and GTN-GARCH recursions.
//!
//! Conditional variances follow the vectorised update
//! `h_t = α₀1 + Σ_k Φ_k (X_{t-k} ⊙ X_{t-k}) + Σ_ℓ Θ_ℓ h_{t-ℓ}` with
//! `Φ_k = α_k I + Σ_r β_kr (W ⊙ S_r)` and `Θ_ℓ = γ_ℓ I + Σ_r' δ_ℓr' (W ⊙ S_r')`.
//! Conditional covariances follow the matrix update built from
//! `B_t = X_tX_tᵀ - diag` and `D_t = Σ_t - diag`, with the symmetrised
//! half-weighted neighbour sums. The final Σ_t keeps the off-diagonals of the
//! covariance update and overrides the diagonal with `h_t`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GngarchError, Result};
use crate::graph::{NetworkMasks, NetworkTopology};
use crate::panel::ReturnPanel;
use crate::params::{GlobalParams, OrderSpec, ParamSet, ThresholdParams};

/// Eigenvalue floor used by the positive-definiteness repair.
pub const EPS_PD: f64 = 1e-10;

/// Simulated paths abort once any |X| passes this threshold.
pub const DIVERGENCE_THRESHOLD: f64 = 1e8;

/// Conditional covariance state at one time step: the full matrix with the
/// diagonal overridden by `h`, plus whether a PD repair was applied.
#[derive(Debug, Clone)]
pub struct CovState {
    pub sigma: DMatrix<f64>,
    pub h: DVector<f64>,
    pub repaired: bool,
}

fn check_history(needed: usize, got: usize) -> Result<()> {
    if got < needed {
        return Err(GngarchError::InsufficientHistory { needed, got });
    }
    Ok(())
}

fn check_dim(d: usize, len: usize, what: &str) -> Result<()> {
    if len != d {
        return Err(GngarchError::Dimension(format!("{what} has dimension {len}, expected {d}")));
    }
    Ok(())
}

/// Variance update over pre-squared return history. `x2_hist[k]` is
/// `X_{t-k-1} ⊙ X_{t-k-1}` (most recent lag first); likewise `h_hist`.
fn variance_kernel(
    params: &GlobalParams,
    orders: &OrderSpec,
    x2_hist: &[DVector<f64>],
    h_hist: &[DVector<f64>],
    masks: &NetworkMasks,
) -> Result<DVector<f64>> {
    let d = masks.node_count();
    check_history(orders.q, x2_hist.len())?;
    check_history(orders.p, h_hist.len())?;
    let mut h = DVector::from_element(d, params.alpha0);
    for k in 0..orders.q {
        let x2 = &x2_hist[k];
        check_dim(d, x2.len(), "lagged squared return")?;
        h.axpy(params.alpha[k], x2, 1.0);
        for (r_idx, &beta) in params.beta[k].iter().enumerate() {
            if beta != 0.0 {
                h.gemv(beta, masks.mask(r_idx + 1)?, x2, 1.0);
            }
        }
    }
    for l in 0..orders.p {
        let h_lag = &h_hist[l];
        check_dim(d, h_lag.len(), "lagged variance")?;
        h.axpy(params.gamma[l], h_lag, 1.0);
        for (r_idx, &delta) in params.delta[l].iter().enumerate() {
            if delta != 0.0 {
                h.gemv(delta, masks.mask(r_idx + 1)?, h_lag, 1.0);
            }
        }
    }
    Ok(h)
}

/// Covariance update over outer-product history. `xxt_hist[k]` is
/// `X_{t-k-1} X_{t-k-1}ᵀ`; `cov_hist[l]` is the assembled `Σ_{t-l-1}`.
fn covariance_kernel(
    params: &GlobalParams,
    orders: &OrderSpec,
    xxt_hist: &[DMatrix<f64>],
    cov_hist: &[DMatrix<f64>],
    masks: &NetworkMasks,
) -> Result<DMatrix<f64>> {
    let d = masks.node_count();
    check_history(orders.q, xxt_hist.len())?;
    check_history(orders.p, cov_hist.len())?;
    let mut sigma = DMatrix::from_element(d, d, params.alpha0);
    for k in 0..orders.q {
        let outer = &xxt_hist[k];
        check_dim(d, outer.nrows(), "lagged return outer product")?;
        sigma += outer * params.alpha[k];
        add_neighbour_terms(&mut sigma, outer, &params.beta[k], masks)?;
    }
    for l in 0..orders.p {
        let cov = &cov_hist[l];
        check_dim(d, cov.nrows(), "lagged covariance")?;
        sigma += cov * params.gamma[l];
        add_neighbour_terms(&mut sigma, cov, &params.delta[l], masks)?;
    }
    Ok(sigma)
}

/// Adds `½ Σ_r c_r [M_r A° + (M_r A°)ᵀ]` to `sigma`, where `A°` is `a` with
/// its diagonal zeroed (the B/D matrices of the covariance update).
fn add_neighbour_terms(
    sigma: &mut DMatrix<f64>,
    a: &DMatrix<f64>,
    coefs: &[f64],
    masks: &NetworkMasks,
) -> Result<()> {
    if coefs.iter().all(|&c| c == 0.0) {
        return Ok(());
    }
    let mut hollow = a.clone();
    hollow.fill_diagonal(0.0);
    for (r_idx, &c) in coefs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let mb = masks.mask(r_idx + 1)? * &hollow;
        let d = sigma.nrows();
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] += 0.5 * c * (mb[(i, j)] + mb[(j, i)]);
            }
        }
    }
    Ok(())
}

/// One conditional-variance step from raw return history (most recent lag
/// first). All entries of the result are strictly positive under the
/// parameter positivity constraints.
pub fn variance_update(
    params: &GlobalParams,
    orders: &OrderSpec,
    past_returns: &[DVector<f64>],
    past_h: &[DVector<f64>],
    masks: &NetworkMasks,
) -> Result<DVector<f64>> {
    let x2: Vec<DVector<f64>> =
        past_returns.iter().take(orders.q).map(|x| x.component_mul(x)).collect();
    variance_kernel(params, orders, &x2, past_h, masks)
}

/// One conditional-covariance step from raw return history. Only the
/// off-diagonal of the result is meaningful; [`assemble_sigma`] overrides the
/// diagonal with the variance update. The output is symmetric exactly.
pub fn covariance_update(
    params: &GlobalParams,
    orders: &OrderSpec,
    past_returns: &[DVector<f64>],
    past_cov: &[DMatrix<f64>],
    masks: &NetworkMasks,
) -> Result<DMatrix<f64>> {
    let xxt: Vec<DMatrix<f64>> =
        past_returns.iter().take(orders.q).map(|x| x * x.transpose()).collect();
    covariance_kernel(params, orders, &xxt, past_cov, masks)
}

/// Sign-regime indicator matrices for the threshold model at one lag:
/// `R = diag(1(X_i >= 0))`, `P_ij = 1(min(X_i,X_j) >= 0)` off-diagonal,
/// `Q_ij = 1(max(X_i,X_j) < 0)` off-diagonal.
pub fn gtn_coefficient_matrices(returns: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = returns.len();
    let mut r = DMatrix::zeros(d, d);
    let mut p = DMatrix::zeros(d, d);
    let mut q = DMatrix::zeros(d, d);
    for i in 0..d {
        if returns[i] >= 0.0 {
            r[(i, i)] = 1.0;
        }
        for j in 0..d {
            if i == j {
                continue;
            }
            if returns[i].min(returns[j]) >= 0.0 {
                p[(i, j)] = 1.0;
            }
            if returns[i].max(returns[j]) < 0.0 {
                q[(i, j)] = 1.0;
            }
        }
    }
    (r, p, q)
}

/// Threshold coefficient for a single pair of lagged returns.
fn gtn_pair_coef(params: &ThresholdParams, k: usize, xi: f64, xj: f64) -> f64 {
    if xi.min(xj) >= 0.0 {
        params.alpha_plus[k]
    } else if xi.max(xj) < 0.0 {
        params.alpha_minus[k]
    } else {
        params.alpha_inter[k]
    }
}

/// GTN-GARCH variance update: the own-return coefficient splits by the sign
/// of the lagged return; neighbour terms are those of the plain model.
pub fn gtn_variance_update(
    params: &ThresholdParams,
    orders: &OrderSpec,
    past_returns: &[DVector<f64>],
    past_h: &[DVector<f64>],
    masks: &NetworkMasks,
) -> Result<DVector<f64>> {
    let d = masks.node_count();
    check_history(orders.q, past_returns.len())?;
    check_history(orders.p, past_h.len())?;
    let mut h = DVector::from_element(d, params.alpha0);
    for k in 0..orders.q {
        let x = &past_returns[k];
        check_dim(d, x.len(), "lagged return")?;
        let x2 = x.component_mul(x);
        for i in 0..d {
            let coef = if x[i] >= 0.0 { params.alpha_plus[k] } else { params.alpha_minus[k] };
            h[i] += coef * x2[i];
        }
        for (r_idx, &beta) in params.beta[k].iter().enumerate() {
            if beta != 0.0 {
                h.gemv(beta, masks.mask(r_idx + 1)?, &x2, 1.0);
            }
        }
    }
    for l in 0..orders.p {
        let h_lag = &past_h[l];
        check_dim(d, h_lag.len(), "lagged variance")?;
        h.axpy(params.gamma[l], h_lag, 1.0);
        for (r_idx, &delta) in params.delta[l].iter().enumerate() {
            if delta != 0.0 {
                h.gemv(delta, masks.mask(r_idx + 1)?, h_lag, 1.0);
            }
        }
    }
    Ok(h)
}

/// GTN-GARCH covariance update: the own cross-product coefficient is chosen
/// entrywise by the joint sign regime; neighbour terms are unchanged.
pub fn gtn_covariance_update(
    params: &ThresholdParams,
    orders: &OrderSpec,
    past_returns: &[DVector<f64>],
    past_cov: &[DMatrix<f64>],
    masks: &NetworkMasks,
) -> Result<DMatrix<f64>> {
    let d = masks.node_count();
    check_history(orders.q, past_returns.len())?;
    check_history(orders.p, past_cov.len())?;
    let mut sigma = DMatrix::from_element(d, d, params.alpha0);
    for k in 0..orders.q {
        let x = &past_returns[k];
        check_dim(d, x.len(), "lagged return")?;
        let outer = x * x.transpose();
        for i in 0..d {
            for j in 0..d {
                sigma[(i, j)] += gtn_pair_coef(params, k, x[i], x[j]) * outer[(i, j)];
            }
        }
        add_neighbour_terms(&mut sigma, &outer, &params.beta[k], masks)?;
    }
    for l in 0..orders.p {
        let cov = &past_cov[l];
        check_dim(d, cov.nrows(), "lagged covariance")?;
        sigma += cov * params.gamma[l];
        add_neighbour_terms(&mut sigma, cov, &params.delta[l], masks)?;
    }
    Ok(sigma)
}

/// Assemble Σ_t: off-diagonals from the covariance update, diagonal
/// overridden by the variance update. The incoming diagonal is discarded.
pub fn assemble_sigma(h: &DVector<f64>, offdiag: &DMatrix<f64>) -> CovState {
    debug_assert_eq!(h.len(), offdiag.nrows());
    let mut sigma = offdiag.clone();
    for i in 0..h.len() {
        sigma[(i, i)] = h[i];
    }
    CovState { sigma, h: h.clone(), repaired: false }
}

/// Repair a symmetric matrix to have minimum eigenvalue >= `eps` by clipping
/// eigenvalues. Returns the input unchanged (flag `false`) when it already
/// satisfies the floor. Clipping is deterministic and idempotent.
pub fn make_pd(sigma: &DMatrix<f64>, eps: f64) -> Result<(DMatrix<f64>, bool)> {
    let n = sigma.nrows();
    if n != sigma.ncols() {
        return Err(GngarchError::Dimension("make_pd needs a square matrix".into()));
    }
    let asym = (sigma - sigma.transpose()).abs().max();
    let scale = sigma.abs().max().max(1.0);
    if asym > 1e-8 * scale {
        return Err(GngarchError::Invalid(format!(
            "make_pd input is not symmetric (max asymmetry {asym:.3e})"
        )));
    }
    let eigen = sigma.clone().symmetric_eigen();
    if eigen.eigenvalues.iter().all(|&ev| ev >= eps) {
        return Ok((sigma.clone(), false));
    }
    let clipped = DVector::from_iterator(n, eigen.eigenvalues.iter().map(|&ev| ev.max(eps)));
    let mut repaired = &eigen.eigenvectors * DMatrix::from_diagonal(&clipped) * eigen.eigenvectors.transpose();
    // Kill the roundoff asymmetry of the reconstruction.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            repaired[(i, j)] = v;
            repaired[(j, i)] = v;
        }
    }
    Ok((repaired, true))
}

/// Lower-triangular factor of the PD-repaired matrix, for drawing
/// `X = L Z`. The absolute eigenvalue floor is meaningless once `‖Σ‖` is
/// huge (reconstruction roundoff exceeds it), so a failed factorization is
/// retried with a relative floor before giving up.
fn sampling_factor(sigma: &DMatrix<f64>) -> Result<(Cholesky<f64, nalgebra::Dyn>, bool)> {
    let (pd, repaired) = make_pd(sigma, EPS_PD)?;
    if let Some(chol) = Cholesky::new(pd) {
        return Ok((chol, repaired));
    }
    let rel_floor = sigma.abs().max() * 1e-12;
    let (pd, _) = make_pd(sigma, rel_floor)?;
    match Cholesky::new(pd) {
        Some(chol) => Ok((chol, true)),
        None => Err(GngarchError::Numeric("Cholesky failed after PD repair".into())),
    }
}

/// Sufficient stationarity condition: the absolute coefficient sum (alpha0
/// excluded) must be strictly below 1. Returns the verdict and the margin
/// `1 - sum`.
pub fn stationarity_check(params: &GlobalParams, orders: &OrderSpec) -> Result<(bool, f64)> {
    params.validate(orders)?;
    let margin = 1.0 - params.coefficient_sum();
    Ok((margin > 0.0, margin))
}

/// Simulation protocol settings.
#[derive(Debug, Clone)]
pub struct SimulationConfig {
    /// Samples generated before discarding burn-in.
    pub t_total: usize,
    /// Fraction of the path discarded from the front.
    pub burn_frac: f64,
    pub seed: u64,
    /// Initial return vector; zeros when absent.
    pub x0: Option<DVector<f64>>,
    /// Initial covariance; `alpha0 * I` when absent.
    pub sigma0: Option<DMatrix<f64>>,
}

impl SimulationConfig {
    pub fn new(t_total: usize, seed: u64) -> Self {
        Self { t_total, burn_frac: 0.20, seed, x0: None, sigma0: None }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.t_total == 0 {
            return Err(GngarchError::Invalid("t_total must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.burn_frac) {
            return Err(GngarchError::Invalid(format!(
                "burn_frac {} outside [0, 1)",
                self.burn_frac
            )));
        }
        if let Some(x0) = &self.x0 {
            check_dim(d, x0.len(), "x0")?;
        }
        if let Some(s0) = &self.sigma0 {
            check_dim(d, s0.nrows(), "sigma0")?;
            let (_, repaired) = make_pd(s0, 0.0)?;
            if repaired {
                return Err(GngarchError::Invalid("sigma0 must be positive definite".into()));
            }
        }
        Ok(())
    }
}

/// A simulated path after burn-in removal: returns, conditional variances
/// and the conditional covariance trace (the recursion values, prior to any
/// sampling repair).
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub returns: ReturnPanel,
    /// d x T matrix of conditional variances h_t.
    pub variances: DMatrix<f64>,
    /// Assembled Σ_t per retained step.
    pub covariances: Vec<DMatrix<f64>>,
    /// Number of steps whose sampling factor needed a PD repair.
    pub repairs: usize,
}

fn alpha0_of(params: &ParamSet) -> f64 {
    match params {
        ParamSet::Global(p) => p.alpha0,
        ParamSet::Threshold(p) => p.alpha0,
    }
}

fn step_updates(
    params: &ParamSet,
    orders: &OrderSpec,
    x_hist: &[DVector<f64>],
    h_hist: &[DVector<f64>],
    cov_hist: &[DMatrix<f64>],
    masks: &NetworkMasks,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    match params {
        ParamSet::Global(p) => Ok((
            variance_update(p, orders, x_hist, h_hist, masks)?,
            covariance_update(p, orders, x_hist, cov_hist, masks)?,
        )),
        ParamSet::Threshold(p) => Ok((
            gtn_variance_update(p, orders, x_hist, h_hist, masks)?,
            gtn_covariance_update(p, orders, x_hist, cov_hist, masks)?,
        )),
    }
}

/// Simulate a GNGARCH (or GTN-GARCH) path: sequentially update Σ_t, repair,
/// factor, draw `X_t = Σ_t^{1/2} Z_t` with Gaussian innovations, and return
/// the post-burn-in tail. Deterministic given the seed. Divergence
/// (any |X| above [`DIVERGENCE_THRESHOLD`]) aborts with an error rather than
/// producing NaNs.
pub fn simulate(
    params: &ParamSet,
    orders: &OrderSpec,
    topology: &NetworkTopology,
    config: &SimulationConfig,
) -> Result<SimulationOutput> {
    params.validate(orders)?;
    let d = topology.node_count();
    config.validate(d)?;
    let masks = NetworkMasks::build(topology, orders.max_stage())?;
    let lags = orders.max_lag();
    let alpha0 = alpha0_of(params);

    let x0 = config.x0.clone().unwrap_or_else(|| DVector::zeros(d));
    let sigma0 = config.sigma0.clone().unwrap_or_else(|| DMatrix::identity(d, d) * alpha0);
    let h0 = sigma0.diagonal();

    // Most recent lag first.
    let mut x_hist = vec![x0; lags];
    let mut h_hist = vec![h0; lags];
    let mut cov_hist = vec![sigma0; lags];

    let burn = (config.burn_frac * config.t_total as f64).floor() as usize;
    let keep = config.t_total - burn;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut returns = DMatrix::zeros(d, keep);
    let mut variances = DMatrix::zeros(d, keep);
    let mut covariances = Vec::with_capacity(keep);
    let mut repairs = 0usize;

    for t in 1..=config.t_total {
        let (h, offdiag) = step_updates(params, orders, &x_hist, &h_hist, &cov_hist, &masks)?;
        let state = assemble_sigma(&h, &offdiag);
        let (chol, was_repaired) = sampling_factor(&state.sigma)
            .map_err(|e| match e {
                GngarchError::Numeric(msg) => {
                    GngarchError::Numeric(format!("{msg} at t={t}"))
                }
                other => other,
            })?;
        if was_repaired {
            repairs += 1;
        }
        let z = DVector::from_iterator(d, (0..d).map(|_| StandardNormal.sample(&mut rng)));
        let x = chol.l() * z;
        for i in 0..d {
            let v: f64 = x[i];
            if !v.is_finite() || v.abs() > DIVERGENCE_THRESHOLD {
                return Err(GngarchError::Divergence { time: t, node: i, value: v.abs() });
            }
        }
        if t > burn {
            let col = t - burn - 1;
            returns.set_column(col, &x);
            variances.set_column(col, &state.h);
            covariances.push(state.sigma.clone());
        }
        // The recursion propagates the raw assembled state; the repair only
        // affects the sampling factor.
        rotate_in(&mut x_hist, x);
        rotate_in(&mut h_hist, state.h);
        rotate_in(&mut cov_hist, state.sigma);
    }

    let labels = topology.labels().to_vec();
    let times = (0..keep).map(|t| t.to_string()).collect();
    Ok(SimulationOutput {
        returns: ReturnPanel::new(returns, labels, times)?,
        variances,
        covariances,
        repairs,
    })
}

fn rotate_in<T>(hist: &mut Vec<T>, newest: T) {
    if hist.is_empty() {
        return;
    }
    hist.pop();
    hist.insert(0, newest);
}

/// Model-implied conditional moment trace over an observed panel.
///
/// Entry `k` corresponds to time `k+1`: each Σ̂_t is built from information
/// up to `t-1`. Pre-sample squared returns are zero and pre-sample
/// covariances are `alpha0 * I`, so the trace starts at t = 1.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub h: Vec<DVector<f64>>,
    pub sigma: Vec<DMatrix<f64>>,
}

impl ModelTrace {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// d x T matrix of the conditional variances (columns t = 1..T-1).
    pub fn variance_matrix(&self) -> DMatrix<f64> {
        let d = self.h.first().map_or(0, |h| h.len());
        let mut m = DMatrix::zeros(d, self.h.len());
        for (t, h) in self.h.iter().enumerate() {
            m.set_column(t, h);
        }
        m
    }
}

/// Run the recursion over an observed panel and collect Σ̂_t for
/// t = 1..T-1. The panel must have at least two time steps.
pub fn model_trace(
    params: &ParamSet,
    orders: &OrderSpec,
    masks: &NetworkMasks,
    panel: &ReturnPanel,
) -> Result<ModelTrace> {
    let d = panel.node_count();
    check_dim(masks.node_count(), d, "panel")?;
    let t_len = panel.len();
    if t_len < 2 {
        return Err(GngarchError::InsufficientHistory { needed: 2, got: t_len });
    }
    let lags = orders.max_lag();
    let alpha0 = alpha0_of(params);

    let mut x_hist: Vec<DVector<f64>> = vec![DVector::zeros(d); lags];
    let mut h_hist: Vec<DVector<f64>> = vec![DVector::from_element(d, alpha0); lags];
    let mut cov_hist: Vec<DMatrix<f64>> = vec![DMatrix::identity(d, d) * alpha0; lags];

    // Observed X_0 enters the history before the first traced step.
    rotate_in(&mut x_hist, panel.values.column(0).into_owned());

    let mut h_out = Vec::with_capacity(t_len - 1);
    let mut sigma_out = Vec::with_capacity(t_len - 1);
    for t in 1..t_len {
        let (h, offdiag) = step_updates(params, orders, &x_hist, &h_hist, &cov_hist, masks)?;
        let state = assemble_sigma(&h, &offdiag);
        h_out.push(state.h.clone());
        sigma_out.push(state.sigma.clone());
        rotate_in(&mut x_hist, panel.values.column(t).into_owned());
        rotate_in(&mut h_hist, state.h);
        rotate_in(&mut cov_hist, state.sigma);
    }
    Ok(ModelTrace { h: h_out, sigma: sigma_out })
}

/// Forecast conditional covariances `horizon` steps past the end of an
/// observed panel.
///
/// The one-step forecast applies the recursion to observed history. Further
/// steps replace the unobserved squared returns by their conditional
/// expectation `h` and cross products by `σ_ij`. Every emitted step is
/// PD-repaired, and repaired matrices propagate through the forecast
/// recursion.
pub fn forecast(
    params: &GlobalParams,
    orders: &OrderSpec,
    topology: &NetworkTopology,
    history: &ReturnPanel,
    horizon: usize,
) -> Result<Vec<CovState>> {
    if horizon < 1 {
        return Err(GngarchError::Invalid("horizon must be >= 1".into()));
    }
    params.validate(orders)?;
    let d = topology.node_count();
    check_dim(d, history.node_count(), "history panel")?;
    let lags = orders.max_lag();
    if history.len() < lags {
        return Err(GngarchError::InsufficientHistory { needed: lags, got: history.len() });
    }
    let masks = NetworkMasks::build(topology, orders.max_stage())?;
    let param_set = ParamSet::Global(params.clone());
    let trace = model_trace(&param_set, orders, &masks, history)?;

    // Seed the moment histories (most recent first) from the observed tail
    // and the in-sample trace.
    let t_len = history.len();
    let mut x2_hist: Vec<DVector<f64>> = Vec::with_capacity(lags);
    let mut xxt_hist: Vec<DMatrix<f64>> = Vec::with_capacity(lags);
    let mut h_hist: Vec<DVector<f64>> = Vec::with_capacity(lags);
    let mut cov_hist: Vec<DMatrix<f64>> = Vec::with_capacity(lags);
    for back in 0..lags {
        let t = t_len - 1 - back;
        let x = history.values.column(t).into_owned();
        x2_hist.push(x.component_mul(&x));
        xxt_hist.push(&x * x.transpose());
        if t >= 1 {
            h_hist.push(trace.h[t - 1].clone());
            cov_hist.push(trace.sigma[t - 1].clone());
        } else {
            h_hist.push(DVector::from_element(d, params.alpha0));
            cov_hist.push(DMatrix::identity(d, d) * params.alpha0);
        }
    }

    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let h = variance_kernel(params, orders, &x2_hist, &h_hist, &masks)?;
        let offdiag = covariance_kernel(params, orders, &xxt_hist, &cov_hist, &masks)?;
        let assembled = assemble_sigma(&h, &offdiag);
        let (pd, repaired) = make_pd(&assembled.sigma, EPS_PD)?;
        let state = CovState { sigma: pd, h: assembled.h, repaired };
        // Unobserved future moments are replaced by their conditional
        // expectations: X ⊙ X by h, X Xᵀ by Σ.
        rotate_in(&mut x2_hist, state.h.clone());
        rotate_in(&mut xxt_hist, state.sigma.clone());
        rotate_in(&mut h_hist, state.h.clone());
        rotate_in(&mut cov_hist, state.sigma.clone());
        out.push(state);
    }
    Ok(out)
}
