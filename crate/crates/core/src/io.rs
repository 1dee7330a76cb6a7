//! File formats: panels and traces as CSV, parameter bundles as JSON.
//!
//! Panel CSV: first column is the time index, remaining columns are node
//! labels. Covariance traces are long-format `t,i,j,value`. Graphs travel as
//! `src,dst` edge lists or adjacency matrices (header `node,<labels..>`).

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GngarchError, Result};
use crate::graph::NetworkTopology;
use crate::market::PricePanel;
use crate::panel::ReturnPanel;
use crate::params::{GlobalParams, OrderSpec, ThresholdParams};

fn parse_f64(field: &str, context: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| {
        GngarchError::Invalid(format!("cannot parse '{field}' as a number in {context}"))
    })
}

/// Write a labelled d x T matrix with a time column (panels, variance
/// traces).
pub fn write_matrix_csv(
    path: &Path,
    values: &DMatrix<f64>,
    labels: &[String],
    times: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string()];
    header.extend_from_slice(labels);
    w.write_record(&header)?;
    for t in 0..values.ncols() {
        let mut record = vec![times[t].clone()];
        record.extend(values.column(t).iter().map(|v| format!("{v:.17e}")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv(path: &Path, panel: &ReturnPanel) -> Result<()> {
    write_matrix_csv(path, &panel.values, &panel.labels, &panel.times)
}

pub fn read_panel_csv(path: &Path) -> Result<ReturnPanel> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 {
        return Err(GngarchError::Invalid(format!(
            "{}: panel CSV needs a time column plus node columns",
            path.display()
        )));
    }
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        times.push(record.get(0).unwrap_or_default().to_string());
        let row = record
            .iter()
            .skip(1)
            .map(|f| parse_f64(f, "panel CSV"))
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != labels.len() {
            return Err(GngarchError::Invalid(format!(
                "{}: ragged panel row at t={}",
                path.display(),
                times.last().unwrap()
            )));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(GngarchError::Invalid(format!("{}: empty panel", path.display())));
    }
    let d = labels.len();
    let t_len = rows.len();
    let mut values = DMatrix::zeros(d, t_len);
    for (t, row) in rows.iter().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            values[(i, t)] = v;
        }
    }
    ReturnPanel::new(values, labels, times)
}

/// Long-format covariance trace `t,i,j,value` over full matrices.
pub fn write_cov_trace_csv(path: &Path, trace: &[DMatrix<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "i", "j", "value"])?;
    for (t, sigma) in trace.iter().enumerate() {
        for i in 0..sigma.nrows() {
            for j in 0..sigma.ncols() {
                w.write_record([
                    t.to_string(),
                    i.to_string(),
                    j.to_string(),
                    format!("{:.17e}", sigma[(i, j)]),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_cov_trace_csv(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut cells: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    let mut d = 0usize;
    for record in r.records() {
        let record = record?;
        let t: usize = record
            .get(0)
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| GngarchError::Invalid("bad t in covariance trace".into()))?;
        let i: usize = record
            .get(1)
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| GngarchError::Invalid("bad i in covariance trace".into()))?;
        let j: usize = record
            .get(2)
            .and_then(|f| f.trim().parse().ok())
            .ok_or_else(|| GngarchError::Invalid("bad j in covariance trace".into()))?;
        let v = parse_f64(record.get(3).unwrap_or_default(), "covariance trace")?;
        d = d.max(i + 1).max(j + 1);
        cells.entry(t).or_default().push((i, j, v));
    }
    if cells.is_empty() {
        return Err(GngarchError::Invalid(format!("{}: empty covariance trace", path.display())));
    }
    let mut out = Vec::with_capacity(cells.len());
    for (t, entries) in cells {
        if t != out.len() {
            return Err(GngarchError::Invalid(format!("covariance trace skips t={}", out.len())));
        }
        let mut m = DMatrix::zeros(d, d);
        for (i, j, v) in entries {
            m[(i, j)] = v;
            if m[(j, i)] == 0.0 {
                m[(j, i)] = v;
            }
        }
        out.push(m);
    }
    Ok(out)
}

pub fn write_edges_csv(path: &Path, topology: &NetworkTopology) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst"])?;
    let labels = topology.labels();
    for (a, b) in topology.edges() {
        w.write_record([labels[a].as_str(), labels[b].as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Read a graph from either an edge-list CSV (`src,dst` header) or an
/// adjacency-matrix CSV (`node,<labels..>` header), detected by the header.
pub fn read_graph_csv(path: &Path) -> Result<NetworkTopology> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let is_edge_list = header.len() == 2
        && header.get(0).map(str::trim) == Some("src")
        && header.get(1).map(str::trim) == Some("dst");
    if is_edge_list {
        let mut edges = Vec::new();
        for record in r.records() {
            let record = record?;
            let a = record.get(0).unwrap_or_default().trim().to_string();
            let b = record.get(1).unwrap_or_default().trim().to_string();
            if a.is_empty() || b.is_empty() {
                return Err(GngarchError::Invalid("edge list row with empty endpoint".into()));
            }
            edges.push((a, b));
        }
        if edges.is_empty() {
            return Err(GngarchError::Invalid(format!(
                "{}: empty edge list (use an adjacency matrix for edgeless graphs)",
                path.display()
            )));
        }
        return NetworkTopology::from_labelled_edges(&edges);
    }
    // Adjacency matrix: column labels from the header, row labels must match.
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let d = labels.len();
    if d == 0 {
        return Err(GngarchError::Invalid(format!("{}: no node columns", path.display())));
    }
    let mut matrix = vec![vec![0.0; d]; d];
    let mut row_count = 0usize;
    for record in r.records() {
        let record = record?;
        if row_count >= d {
            return Err(GngarchError::Invalid("adjacency matrix has too many rows".into()));
        }
        let row_label = record.get(0).unwrap_or_default().trim();
        if row_label != labels[row_count] {
            return Err(GngarchError::Invalid(format!(
                "adjacency row label '{row_label}' does not match column order '{}'",
                labels[row_count]
            )));
        }
        for j in 0..d {
            matrix[row_count][j] =
                parse_f64(record.get(j + 1).unwrap_or_default(), "adjacency matrix")?;
        }
        row_count += 1;
    }
    if row_count != d {
        return Err(GngarchError::Invalid("adjacency matrix is not square".into()));
    }
    let mut edges = Vec::new();
    for i in 0..d {
        if matrix[i][i] != 0.0 {
            return Err(GngarchError::Invalid(format!("self-loop at node {}", labels[i])));
        }
        for j in (i + 1)..d {
            if matrix[i][j] != matrix[j][i] {
                return Err(GngarchError::Invalid(format!(
                    "adjacency matrix asymmetric at ({}, {})",
                    labels[i], labels[j]
                )));
            }
            if matrix[i][j] != 0.0 {
                edges.push((i, j));
            }
        }
    }
    NetworkTopology::new(d, &edges)?.with_labels(labels)
}

/// Price CSV: header `date,<tickers..>`, ISO-8601 dates only.
pub fn read_prices_csv(path: &Path) -> Result<PricePanel> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 {
        return Err(GngarchError::Invalid(format!(
            "{}: price CSV needs a date column plus tickers",
            path.display()
        )));
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut dates = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in r.records() {
        let record = record?;
        let raw = record.get(0).unwrap_or_default().trim();
        let date = NaiveDate::parse_from_str(raw, "%Y-%m-%d").map_err(|_| {
            GngarchError::Invalid(format!("'{raw}' is not an ISO-8601 (YYYY-MM-DD) date"))
        })?;
        dates.push(date);
        rows.push(
            record
                .iter()
                .skip(1)
                .map(|f| parse_f64(f, "price CSV"))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let d = tickers.len();
    let t_len = rows.len();
    let mut prices = DMatrix::zeros(d, t_len);
    for (t, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(GngarchError::Invalid(format!("ragged price row for {}", dates[t])));
        }
        for (i, &v) in row.iter().enumerate() {
            prices[(i, t)] = v;
        }
    }
    PricePanel::new(prices, tickers, dates)
}

/// Integrated correlation matrix as CSV with labelled rows/columns.
pub fn write_corr_csv(path: &Path, corr: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["node".to_string()];
    header.extend_from_slice(labels);
    w.write_record(&header)?;
    for i in 0..corr.nrows() {
        let mut record = vec![labels[i].clone()];
        record.extend((0..corr.ncols()).map(|j| format!("{:.10}", corr[(i, j)])));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Model specification on disk: orders plus exactly one parameter family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecFile {
    pub orders: OrderSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<GlobalParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_params: Option<ThresholdParams>,
}

impl ModelSpecFile {
    pub fn global(orders: OrderSpec, params: GlobalParams) -> Self {
        Self { orders, params: Some(params), threshold_params: None }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.params, &self.threshold_params) {
            (Some(p), None) => p.validate(&self.orders),
            (None, Some(p)) => p.validate(&self.orders),
            _ => Err(GngarchError::Invalid(
                "specify exactly one of 'params' or 'threshold_params'".into(),
            )),
        }
    }

    pub fn to_param_set(&self) -> Result<crate::params::ParamSet> {
        self.validate()?;
        Ok(match (&self.params, &self.threshold_params) {
            (Some(p), None) => crate::params::ParamSet::Global(p.clone()),
            (None, Some(p)) => crate::params::ParamSet::Threshold(p.clone()),
            _ => unreachable!("validated"),
        })
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}
