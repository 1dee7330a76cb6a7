//! Multivariate return panel: one row per node, one column per time step.

use nalgebra::DMatrix;

use crate::error::{GngarchError, Result};

/// A d x T panel of (log-)returns with node labels and a time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPanel {
    /// Row i, column t holds the return of node i at time t.
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    pub times: Vec<String>,
}

impl ReturnPanel {
    pub fn new(values: DMatrix<f64>, labels: Vec<String>, times: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(GngarchError::Invalid("panel must have at least one time step".into()));
        }
        if labels.len() != values.nrows() {
            return Err(GngarchError::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                values.nrows()
            )));
        }
        if times.len() != values.ncols() {
            return Err(GngarchError::Dimension(format!(
                "{} time stamps for {} columns",
                times.len(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GngarchError::Invalid("panel contains non-finite values".into()));
        }
        Ok(Self { values, labels, times })
    }

    /// Panel with default labels `0..d-1` and times `0..T-1`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let labels = (0..values.nrows()).map(|i| i.to_string()).collect();
        let times = (0..values.ncols()).map(|t| t.to_string()).collect();
        Self::new(values, labels, times)
    }

    pub fn node_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Returns of one node as a time series.
    pub fn series(&self, node: usize) -> Vec<f64> {
        self.values.row(node).iter().copied().collect()
    }
}
