//! Stylised-fact statistics and pre-modelling tests.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{GngarchError, Result};
use crate::graph::{NetworkMasks, NetworkTopology};
use crate::panel::ReturnPanel;

/// Sample autocorrelations at lags `1..=max_lag` with the 95% band
/// `±1.96/√T`.
#[derive(Debug, Clone)]
pub struct AcfResult {
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub band: f64,
}

/// Biased-denominator sample autocorrelation at a single lag;
/// `autocorrelation(x, 0)` is exactly 1.
pub fn autocorrelation(series: &[f64], lag: usize) -> Result<f64> {
    let t_len = series.len();
    if t_len <= lag {
        return Err(GngarchError::Invalid(format!("series of length {t_len} has no lag {lag}")));
    }
    let mean = series.iter().sum::<f64>() / t_len as f64;
    let denom: f64 = series.iter().map(|x| (x - mean) * (x - mean)).sum();
    if denom == 0.0 {
        return Err(GngarchError::Numeric("constant series has undefined ACF".into()));
    }
    let num: f64 = (lag..t_len).map(|t| (series[t] - mean) * (series[t - lag] - mean)).sum();
    Ok(num / denom)
}

pub fn sample_acf(series: &[f64], max_lag: usize) -> Result<AcfResult> {
    if series.len() <= max_lag {
        return Err(GngarchError::Invalid(format!(
            "need more than {max_lag} observations, have {}",
            series.len()
        )));
    }
    let values: Vec<f64> =
        (1..=max_lag).map(|k| autocorrelation(series, k)).collect::<Result<_>>()?;
    Ok(AcfResult {
        lags: (1..=max_lag).collect(),
        values,
        band: 1.96 / (series.len() as f64).sqrt(),
    })
}

/// Pearson kurtosis `m₄/m₂²` and skewness `m₃/m₂^{3/2}` from central sample
/// moments.
pub fn moment_stats(series: &[f64]) -> Result<(f64, f64)> {
    let t_len = series.len();
    if t_len < 4 {
        return Err(GngarchError::Invalid("moment statistics need at least 4 points".into()));
    }
    let mean = series.iter().sum::<f64>() / t_len as f64;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in series {
        let c = x - mean;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
    }
    m2 /= t_len as f64;
    m3 /= t_len as f64;
    m4 /= t_len as f64;
    if m2 == 0.0 {
        return Err(GngarchError::Numeric("zero variance; moments undefined".into()));
    }
    Ok((m4 / (m2 * m2), m3 / m2.powf(1.5)))
}

/// Studentised non-overlapping window sums paired with standard-normal
/// quantiles (plotting positions `(k - 0.5)/n`), sorted ascending.
#[derive(Debug, Clone)]
pub struct AggregatedQq {
    pub window: usize,
    /// Sorted studentised aggregated returns.
    pub sample: Vec<f64>,
    /// Matching N(0,1) quantiles.
    pub normal: Vec<f64>,
}

impl AggregatedQq {
    pub fn max_abs_deviation(&self) -> f64 {
        self.sample
            .iter()
            .zip(&self.normal)
            .map(|(s, q)| (s - q).abs())
            .fold(0.0, f64::max)
    }
}

pub fn aggregate_returns(series: &[f64], window: usize) -> Result<AggregatedQq> {
    if window < 1 {
        return Err(GngarchError::Invalid("window must be >= 1".into()));
    }
    let n = series.len() / window;
    if n < 2 {
        return Err(GngarchError::Invalid(format!(
            "{} observations give fewer than 2 windows of size {window}",
            series.len()
        )));
    }
    let mut sums: Vec<f64> =
        (0..n).map(|k| series[k * window..(k + 1) * window].iter().sum()).collect();
    let mean = sums.iter().sum::<f64>() / n as f64;
    let sd = (sums.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    if sd == 0.0 {
        return Err(GngarchError::Numeric("aggregated series is constant".into()));
    }
    for s in sums.iter_mut() {
        *s = (*s - mean) / sd;
    }
    sums.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let normal = Normal::standard();
    let quantiles: Vec<f64> =
        (1..=n).map(|k| normal.inverse_cdf((k as f64 - 0.5) / n as f64)).collect();
    Ok(AggregatedQq { window, sample: sums, normal: quantiles })
}

/// Quartiles of the conditional standard deviation after a positive vs a
/// negative previous return, per node.
#[derive(Debug, Clone)]
pub struct LeverageSummary {
    pub node: usize,
    /// `[q25, median, q75]` of sd following `X_{t-1} >= 0`.
    pub positive: [f64; 3],
    /// `[q25, median, q75]` of sd following `X_{t-1} < 0`.
    pub negative: [f64; 3],
    pub n_positive: usize,
    pub n_negative: usize,
}

fn quartiles(sorted: &[f64]) -> [f64; 3] {
    [quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.5), quantile_sorted(sorted, 0.75)]
}

/// Linear-interpolation quantile of a sorted slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Split each node's conditional-sd series by the sign of the previous
/// return. `sd_trace` must be time-aligned with the panel (column `t` of
/// both refers to the same step); pairs are `(sign X_{t-1}, sd_t)`.
pub fn leverage_split(panel: &ReturnPanel, sd_trace: &DMatrix<f64>) -> Result<Vec<LeverageSummary>> {
    let d = panel.node_count();
    let t_len = panel.len();
    if sd_trace.nrows() != d || sd_trace.ncols() != t_len {
        return Err(GngarchError::Dimension("sd trace does not align with the panel".into()));
    }
    let mut out = Vec::with_capacity(d);
    for i in 0..d {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for t in 1..t_len {
            if panel.values[(i, t - 1)] >= 0.0 {
                pos.push(sd_trace[(i, t)]);
            } else {
                neg.push(sd_trace[(i, t)]);
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return Err(GngarchError::Numeric(format!(
                "node {i} has an empty sign class ({} positive, {} negative)",
                pos.len(),
                neg.len()
            )));
        }
        pos.sort_by(|a, b| a.partial_cmp(b).unwrap());
        neg.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(LeverageSummary {
            node: i,
            positive: quartiles(&pos),
            negative: quartiles(&neg),
            n_positive: pos.len(),
            n_negative: neg.len(),
        });
    }
    Ok(out)
}

/// Autocovariance bound of the NVACF normalisation:
/// `λ = sqrt(max_j Σ_i (W ⊙ W)_ij)`.
pub fn autocovariance_bound(masks: &NetworkMasks) -> f64 {
    let w = &masks.weights().w;
    let mut max_col = 0.0f64;
    for j in 0..w.ncols() {
        let col_sum: f64 = w.column(j).iter().map(|v| v * v).sum();
        max_col = max_col.max(col_sum);
    }
    max_col.sqrt()
}

/// Network volatility autocorrelation at lag `h` and stage `r`, computed on
/// a model-implied conditional variance trace (d x T, column = time step).
/// Per-node time means are subtracted; the numerator weights cross terms by
/// `W ⊙ S_r + I` and the denominator normalises by `(1 + λ) I`.
pub fn nvacf(h_panel: &DMatrix<f64>, masks: &NetworkMasks, h: usize, r: usize) -> Result<f64> {
    let d = h_panel.nrows();
    let t_len = h_panel.ncols();
    if masks.node_count() != d {
        return Err(GngarchError::Dimension("variance trace does not match the network".into()));
    }
    if t_len <= h {
        return Err(GngarchError::Invalid(format!("trace of length {t_len} has no lag {h}")));
    }
    let mask = masks.mask(r)?;
    let lambda = autocovariance_bound(masks);

    let mut means = DVector::zeros(d);
    for t in 0..t_len {
        means += h_panel.column(t);
    }
    means /= t_len as f64;

    let centered: Vec<DVector<f64>> =
        (0..t_len).map(|t| h_panel.column(t) - &means).collect();

    let mut denom = 0.0;
    for a in &centered {
        denom += a.norm_squared();
    }
    denom *= 1.0 + lambda;
    if denom == 0.0 {
        return Err(GngarchError::Numeric("constant variance trace; NVACF undefined".into()));
    }

    let mut num = 0.0;
    for t in 0..(t_len - h) {
        let lead = &centered[t + h];
        let lag = &centered[t];
        num += lead.dot(lag) + lead.dot(&(mask * lag));
    }
    Ok(num / denom)
}

/// NVACF over the full lag/stage grid, for Corbit-style display (rings =
/// stage, angle = lag).
#[derive(Debug, Clone)]
pub struct CorbitGrid {
    pub h_max: usize,
    pub r_max: usize,
    /// `values[(h-1, r-1)] = nvacf(h, r)`.
    pub values: DMatrix<f64>,
    pub lambda: f64,
}

pub fn corbit_grid(
    h_panel: &DMatrix<f64>,
    topology: &NetworkTopology,
    h_max: usize,
    r_max: usize,
) -> Result<CorbitGrid> {
    if h_max < 1 || r_max < 1 {
        return Err(GngarchError::Invalid("corbit grid needs h_max >= 1 and r_max >= 1".into()));
    }
    let masks = NetworkMasks::build(topology, r_max)?;
    let mut values = DMatrix::zeros(h_max, r_max);
    for h in 1..=h_max {
        for r in 1..=r_max {
            values[(h - 1, r - 1)] = nvacf(h_panel, &masks, h, r)?;
        }
    }
    Ok(CorbitGrid { h_max, r_max, values, lambda: autocovariance_bound(&masks) })
}

/// Augmented Dickey-Fuller regression result.
#[derive(Debug, Clone)]
pub struct AdfResult {
    pub statistic: f64,
    pub lags: usize,
    pub reject_at_5pct: bool,
}

/// 1% / 5% / 10% critical values for the constant-only ADF regression.
pub const ADF_CRITICAL: [f64; 3] = [-3.43, -2.86, -2.57];

/// Schwert lag rule `⌊12 (T/100)^{1/4}⌋`.
pub fn schwert_lags(t_len: usize) -> usize {
    (12.0 * (t_len as f64 / 100.0).powf(0.25)).floor() as usize
}

/// ADF unit-root test with constant and no trend. `H0`: unit root; reject at
/// 5% when the t-ratio on the lagged level falls below -2.86. Lag order via
/// the Schwert rule unless overridden.
pub fn adf_test(series: &[f64], max_lag: Option<usize>) -> Result<AdfResult> {
    let t_len = series.len();
    let lags = max_lag.unwrap_or_else(|| schwert_lags(t_len));
    // Regression rows: t = lags+1 .. t_len-1 over Δy_t.
    let n_obs = t_len.saturating_sub(lags + 1);
    let n_coef = lags + 2;
    if n_obs < n_coef + 4 {
        return Err(GngarchError::Invalid(format!(
            "series of length {t_len} too short for ADF with {lags} lagged differences"
        )));
    }
    let dy: Vec<f64> = (1..t_len).map(|t| series[t] - series[t - 1]).collect();
    let mut x = DMatrix::zeros(n_obs, n_coef);
    let mut y = DVector::zeros(n_obs);
    for (row, t) in ((lags + 1)..t_len).enumerate() {
        y[row] = dy[t - 1];
        x[(row, 0)] = 1.0;
        x[(row, 1)] = series[t - 1];
        for lag in 1..=lags {
            x[(row, 1 + lag)] = dy[t - 1 - lag];
        }
    }
    let (coef, se) = ols_with_se(&x, &y)?;
    let statistic = coef[1] / se[1];
    Ok(AdfResult { statistic, lags, reject_at_5pct: statistic < ADF_CRITICAL[1] })
}

/// OLS via the normal equations with coefficient standard errors.
fn ols_with_se(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x.nrows();
    let k = x.ncols();
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let chol = nalgebra::Cholesky::new(xtx)
        .ok_or_else(|| GngarchError::Numeric("singular design matrix in OLS".into()))?;
    let coef = chol.solve(&xty);
    let resid = y - x * &coef;
    let s2 = resid.norm_squared() / (n - k) as f64;
    let xtx_inv = chol.inverse();
    let se = DVector::from_iterator(k, (0..k).map(|i| (s2 * xtx_inv[(i, i)]).sqrt()));
    Ok((coef, se))
}

/// Durbin-Watson statistic `Σ(e_t - e_{t-1})² / Σ e_t²`; always in [0, 4].
pub fn durbin_watson(residuals: &[f64]) -> Result<f64> {
    if residuals.len() < 2 {
        return Err(GngarchError::Invalid("Durbin-Watson needs at least 2 residuals".into()));
    }
    let denom: f64 = residuals.iter().map(|e| e * e).sum();
    if denom == 0.0 {
        return Err(GngarchError::Numeric("all residuals are zero".into()));
    }
    let num: f64 = residuals.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    Ok(num / denom)
}

/// Spurious-relationship diagnostics for one node pair.
#[derive(Debug, Clone)]
pub struct PairDiagnostic {
    pub i: usize,
    pub j: usize,
    pub r_squared: f64,
    pub durbin_watson: f64,
    /// Suspected spurious relationship: R² exceeds the DW statistic.
    pub flagged: bool,
}

/// OLS of every unordered pair (higher index regressed on lower, with
/// intercept); pairs with `R² > d` are flagged.
pub fn spurious_scan(panel: &ReturnPanel) -> Result<Vec<PairDiagnostic>> {
    let d = panel.node_count();
    if d < 2 {
        return Err(GngarchError::Invalid("spurious scan needs at least 2 nodes".into()));
    }
    let t_len = panel.len();
    let mut out = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let xs: Vec<f64> = panel.values.row(i).iter().copied().collect();
            let ys: Vec<f64> = panel.values.row(j).iter().copied().collect();
            let x_mean = xs.iter().sum::<f64>() / t_len as f64;
            let y_mean = ys.iter().sum::<f64>() / t_len as f64;
            let sxx: f64 = xs.iter().map(|v| (v - x_mean) * (v - x_mean)).sum();
            let syy: f64 = ys.iter().map(|v| (v - y_mean) * (v - y_mean)).sum();
            if sxx == 0.0 {
                return Err(GngarchError::Numeric(format!("node {i} is constant; OLS undefined")));
            }
            if syy == 0.0 {
                return Err(GngarchError::Numeric(format!("node {j} is constant; R² undefined")));
            }
            let sxy: f64 =
                xs.iter().zip(&ys).map(|(xv, yv)| (xv - x_mean) * (yv - y_mean)).sum();
            let slope = sxy / sxx;
            let intercept = y_mean - slope * x_mean;
            let residuals: Vec<f64> =
                xs.iter().zip(&ys).map(|(xv, yv)| yv - intercept - slope * xv).collect();
            let rss: f64 = residuals.iter().map(|e| e * e).sum();
            let r_squared = 1.0 - rss / syy;
            let dw = durbin_watson(&residuals)?;
            out.push(PairDiagnostic {
                i,
                j,
                r_squared,
                durbin_watson: dw,
                flagged: r_squared > dw,
            });
        }
    }
    Ok(out)
}
