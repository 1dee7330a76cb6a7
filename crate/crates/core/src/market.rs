//! Price ingestion, return computation and correlation-threshold network
//! construction.

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;

use crate::error::{GngarchError, Result};
use crate::graph::NetworkTopology;
use crate::panel::ReturnPanel;

/// Observed prices: d tickers over T+1 dated observations.
#[derive(Debug, Clone)]
pub struct PricePanel {
    pub prices: DMatrix<f64>,
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
}

impl PricePanel {
    pub fn new(prices: DMatrix<f64>, tickers: Vec<String>, dates: Vec<NaiveDate>) -> Result<Self> {
        if tickers.len() != prices.nrows() {
            return Err(GngarchError::Dimension(format!(
                "{} tickers for {} rows",
                tickers.len(),
                prices.nrows()
            )));
        }
        if dates.len() != prices.ncols() {
            return Err(GngarchError::Dimension(format!(
                "{} dates for {} columns",
                dates.len(),
                prices.ncols()
            )));
        }
        if prices.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(GngarchError::Invalid("prices must be strictly positive".into()));
        }
        if dates.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GngarchError::Invalid("dates must be strictly increasing".into()));
        }
        Ok(Self { prices, tickers, dates })
    }

    fn return_panel(&self, f: impl Fn(f64, f64) -> f64) -> Result<ReturnPanel> {
        let d = self.prices.nrows();
        let t_len = self.prices.ncols();
        if t_len < 2 {
            return Err(GngarchError::Invalid("need at least two prices per ticker".into()));
        }
        let mut values = DMatrix::zeros(d, t_len - 1);
        for i in 0..d {
            for t in 1..t_len {
                values[(i, t - 1)] = f(self.prices[(i, t)], self.prices[(i, t - 1)]);
            }
        }
        let times = self.dates[1..].iter().map(|d| d.to_string()).collect();
        ReturnPanel::new(values, self.tickers.clone(), times)
    }

    /// Dates aligned with the return panel (the first price date drops out).
    pub fn return_dates(&self) -> Vec<NaiveDate> {
        self.dates[1..].to_vec()
    }
}

/// Log returns `r_t = log P_t - log P_{t-1}`.
pub fn log_returns(prices: &PricePanel) -> Result<ReturnPanel> {
    prices.return_panel(|p, prev| (p / prev).ln())
}

/// Simple returns `r_t = (P_t - P_{t-1}) / P_{t-1}`.
pub fn simple_returns(prices: &PricePanel) -> Result<ReturnPanel> {
    prices.return_panel(|p, prev| (p - prev) / prev)
}

/// Linear-interpolation quantile of raw (unsorted) values, so edge counts
/// land near `(1 - q) · d(d-1)/2` up to ties.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    crate::diagnostics::quantile_sorted(&sorted, q)
}

/// Correlation-of-correlation network.
///
/// Per calendar month: sample correlation matrix of the returns, entrywise
/// absolute value. Average over months (skipping pair-months whose
/// correlation is undefined because a stock is constant within the month),
/// then link pairs whose integrated correlation strictly exceeds the
/// requested quantile of the upper off-diagonal values. Returns the
/// topology and the integrated correlation matrix.
pub fn coc_network(
    panel: &ReturnPanel,
    dates: &[NaiveDate],
    threshold_quantile: f64,
) -> Result<(NetworkTopology, DMatrix<f64>)> {
    let d = panel.node_count();
    let t_len = panel.len();
    if dates.len() != t_len {
        return Err(GngarchError::Dimension(format!(
            "{} dates for a {t_len}-step panel",
            dates.len()
        )));
    }
    if !(0.0 < threshold_quantile && threshold_quantile < 1.0) {
        return Err(GngarchError::Invalid(format!(
            "threshold quantile {threshold_quantile} outside (0, 1)"
        )));
    }
    if d < 2 {
        return Err(GngarchError::Invalid("network construction needs at least 2 nodes".into()));
    }

    // Calendar-month partition, in date order.
    let mut months: Vec<((i32, u32), Vec<usize>)> = Vec::new();
    for (t, date) in dates.iter().enumerate() {
        let key = (date.year(), date.month());
        match months.last_mut() {
            Some((k, cols)) if *k == key => cols.push(t),
            _ => months.push((key, vec![t])),
        }
    }
    let mut sum: DMatrix<f64> = DMatrix::zeros(d, d);
    let mut count: DMatrix<f64> = DMatrix::zeros(d, d);
    for ((year, month), cols) in &months {
        if cols.len() < 3 {
            return Err(GngarchError::Invalid(format!(
                "month {year}-{month:02} has only {} observations (need >= 3)",
                cols.len()
            )));
        }
        let n = cols.len() as f64;
        let means: Vec<f64> = (0..d)
            .map(|i| cols.iter().map(|&t| panel.values[(i, t)]).sum::<f64>() / n)
            .collect();
        let sds: Vec<f64> = (0..d)
            .map(|i| {
                (cols.iter().map(|&t| (panel.values[(i, t)] - means[i]).powi(2)).sum::<f64>() / n)
                    .sqrt()
            })
            .collect();
        for i in 0..d {
            for j in (i + 1)..d {
                if sds[i] == 0.0 || sds[j] == 0.0 {
                    // Undefined correlation: this pair-month is skipped and
                    // the averaging divisor adjusted.
                    continue;
                }
                let cov: f64 = cols
                    .iter()
                    .map(|&t| (panel.values[(i, t)] - means[i]) * (panel.values[(j, t)] - means[j]))
                    .sum::<f64>()
                    / n;
                let corr = (cov / (sds[i] * sds[j])).abs();
                sum[(i, j)] += corr;
                count[(i, j)] += 1.0;
            }
        }
    }

    let mut integrated = DMatrix::zeros(d, d);
    let mut upper = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        integrated[(i, i)] = 1.0;
        for j in (i + 1)..d {
            let value = if count[(i, j)] > 0.0 { sum[(i, j)] / count[(i, j)] } else { 0.0 };
            integrated[(i, j)] = value;
            integrated[(j, i)] = value;
            upper.push(value);
        }
    }

    let threshold = quantile(&upper, threshold_quantile);
    let mut edges = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if integrated[(i, j)] > threshold {
                edges.push((i, j));
            }
        }
    }
    let topology = NetworkTopology::new(d, &edges)?.with_labels(panel.labels.clone())?;
    Ok((topology, integrated))
}
