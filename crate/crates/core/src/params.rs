//! Model order specification and parameter bundles.

use serde::{Deserialize, Serialize};

use crate::error::{GngarchError, Result};

/// Order specification for a GNGARCH(p, q, [s_1..s_q], [r_1..r_p]) model.
///
/// `q` return lags with neighbour-clustering stage bounds `s`, `p` variance
/// lags with neighbour-persistence stage bounds `rp`. A stage bound of 0
/// means the lag has no neighbour term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderSpec {
    pub p: usize,
    pub q: usize,
    /// Clustering stage bound per return lag, length `q`.
    pub s: Vec<usize>,
    /// Persistence stage bound per variance lag, length `p`.
    pub rp: Vec<usize>,
}

impl OrderSpec {
    pub fn new(p: usize, q: usize, s: Vec<usize>, rp: Vec<usize>) -> Result<Self> {
        let spec = Self { p, q, s, rp };
        spec.validate()?;
        Ok(spec)
    }

    /// The parsimonious network GARCH(1,1) specification used throughout the
    /// simulation studies.
    pub fn one_one() -> Self {
        Self { p: 1, q: 1, s: vec![1], rp: vec![1] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q < 1 {
            return Err(GngarchError::Invalid("q must be >= 1".into()));
        }
        if self.s.len() != self.q {
            return Err(GngarchError::Invalid(format!(
                "s has {} entries for q = {}",
                self.s.len(),
                self.q
            )));
        }
        if self.rp.len() != self.p {
            return Err(GngarchError::Invalid(format!(
                "rp has {} entries for p = {}",
                self.rp.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// Largest neighbour stage referenced by any lag.
    pub fn max_stage(&self) -> usize {
        self.s.iter().chain(self.rp.iter()).copied().max().unwrap_or(0)
    }

    /// History depth the recursions need.
    pub fn max_lag(&self) -> usize {
        self.p.max(self.q)
    }

    /// Number of free parameters: alpha0, q alphas, p gammas, plus the
    /// ragged beta/delta blocks.
    pub fn param_count(&self) -> usize {
        1 + self.q + self.p + self.s.iter().sum::<usize>() + self.rp.iter().sum::<usize>()
    }
}

/// Global parameter bundle `(α₀, {α_k}, {γ_ℓ}, {β_kr}, {δ_ℓr'})` shared by
/// every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalParams {
    pub alpha0: f64,
    /// Own-return coefficients, length `q`.
    pub alpha: Vec<f64>,
    /// Own-variance coefficients, length `p`.
    pub gamma: Vec<f64>,
    /// Neighbour clustering coefficients, `beta[k]` has length `s[k+1]`.
    pub beta: Vec<Vec<f64>>,
    /// Neighbour persistence coefficients, `delta[l]` has length `rp[l+1]`.
    pub delta: Vec<Vec<f64>>,
}

impl GlobalParams {
    /// The five-parameter GNGARCH(1,1,[1],[1]) bundle.
    pub fn one_one(alpha0: f64, alpha1: f64, gamma1: f64, beta11: f64, delta11: f64) -> Self {
        Self {
            alpha0,
            alpha: vec![alpha1],
            gamma: vec![gamma1],
            beta: vec![vec![beta11]],
            delta: vec![vec![delta11]],
        }
    }

    /// Positivity constraints: `alpha0 > 0`, everything else `>= 0`, and all
    /// shapes consistent with `orders`.
    pub fn validate(&self, orders: &OrderSpec) -> Result<()> {
        orders.validate()?;
        if !(self.alpha0 > 0.0) {
            return Err(GngarchError::Invalid(format!("alpha0 = {} must be > 0", self.alpha0)));
        }
        let shape_err = |what: &str| GngarchError::Invalid(format!("{what} shape mismatch with orders"));
        if self.alpha.len() != orders.q || self.beta.len() != orders.q {
            return Err(shape_err("alpha/beta"));
        }
        if self.gamma.len() != orders.p || self.delta.len() != orders.p {
            return Err(shape_err("gamma/delta"));
        }
        for (k, row) in self.beta.iter().enumerate() {
            if row.len() != orders.s[k] {
                return Err(shape_err("beta"));
            }
        }
        for (l, row) in self.delta.iter().enumerate() {
            if row.len() != orders.rp[l] {
                return Err(shape_err("delta"));
            }
        }
        let nonneg = self
            .alpha
            .iter()
            .chain(self.gamma.iter())
            .chain(self.beta.iter().flatten())
            .chain(self.delta.iter().flatten())
            .all(|&v| v >= 0.0);
        if !nonneg {
            return Err(GngarchError::Invalid(
                "alpha, gamma, beta, delta coefficients must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Coefficient sum of the sufficient stationarity condition (alpha0
    /// excluded), using absolute values.
    pub fn coefficient_sum(&self) -> f64 {
        self.alpha
            .iter()
            .chain(self.gamma.iter())
            .chain(self.beta.iter().flatten())
            .chain(self.delta.iter().flatten())
            .map(|v| v.abs())
            .sum()
    }

    /// Flatten to the optimizer's parameter vector:
    /// `(alpha0, alpha.., gamma.., beta.., delta..)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(1 + self.alpha.len() + self.gamma.len());
        v.push(self.alpha0);
        v.extend(&self.alpha);
        v.extend(&self.gamma);
        v.extend(self.beta.iter().flatten());
        v.extend(self.delta.iter().flatten());
        v
    }

    /// Rebuild from a flat vector laid out as in [`GlobalParams::to_vec`].
    pub fn from_vec(orders: &OrderSpec, v: &[f64]) -> Result<Self> {
        if v.len() != orders.param_count() {
            return Err(GngarchError::Dimension(format!(
                "parameter vector has {} entries, expected {}",
                v.len(),
                orders.param_count()
            )));
        }
        let mut it = v.iter().copied();
        let alpha0 = it.next().unwrap();
        let alpha: Vec<f64> = (&mut it).take(orders.q).collect();
        let gamma: Vec<f64> = (&mut it).take(orders.p).collect();
        let beta = orders.s.iter().map(|&n| (&mut it).take(n).collect()).collect();
        let delta = orders.rp.iter().map(|&n| (&mut it).take(n).collect()).collect();
        Ok(Self { alpha0, alpha, gamma, beta, delta })
    }

    /// Parameter names aligned with [`GlobalParams::to_vec`].
    pub fn names(orders: &OrderSpec) -> Vec<String> {
        let mut names = vec!["alpha0".to_string()];
        names.extend((1..=orders.q).map(|k| format!("alpha{k}")));
        names.extend((1..=orders.p).map(|l| format!("gamma{l}")));
        for (k, &sk) in orders.s.iter().enumerate() {
            names.extend((1..=sk).map(move |r| format!("beta{}{r}", k + 1)));
        }
        for (l, &rl) in orders.rp.iter().enumerate() {
            names.extend((1..=rl).map(move |r| format!("delta{}{r}", l + 1)));
        }
        names
    }
}

/// Threshold parameters: each own-return coefficient `α_k` splits by sign
/// regime into `(α_k⁺, α_k⁻, α_k^inter)`; neighbour terms are unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdParams {
    pub alpha0: f64,
    pub alpha_plus: Vec<f64>,
    pub alpha_minus: Vec<f64>,
    pub alpha_inter: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
}

impl ThresholdParams {
    pub fn one_one(
        alpha0: f64,
        alpha_plus: f64,
        alpha_minus: f64,
        alpha_inter: f64,
        gamma1: f64,
        beta11: f64,
        delta11: f64,
    ) -> Self {
        Self {
            alpha0,
            alpha_plus: vec![alpha_plus],
            alpha_minus: vec![alpha_minus],
            alpha_inter: vec![alpha_inter],
            gamma: vec![gamma1],
            beta: vec![vec![beta11]],
            delta: vec![vec![delta11]],
        }
    }

    /// Threshold parameters collapsing to a plain parameter bundle.
    pub fn from_global(params: &GlobalParams) -> Self {
        Self {
            alpha0: params.alpha0,
            alpha_plus: params.alpha.clone(),
            alpha_minus: params.alpha.clone(),
            alpha_inter: params.alpha.clone(),
            gamma: params.gamma.clone(),
            beta: params.beta.clone(),
            delta: params.delta.clone(),
        }
    }

    pub fn validate(&self, orders: &OrderSpec) -> Result<()> {
        // Reuse the plain validation on the plus-branch, then check the rest.
        let as_global = GlobalParams {
            alpha0: self.alpha0,
            alpha: self.alpha_plus.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            delta: self.delta.clone(),
        };
        as_global.validate(orders)?;
        if self.alpha_minus.len() != orders.q || self.alpha_inter.len() != orders.q {
            return Err(GngarchError::Invalid("alpha_minus/alpha_inter length mismatch".into()));
        }
        if self.alpha_minus.iter().chain(self.alpha_inter.iter()).any(|&v| v < 0.0) {
            return Err(GngarchError::Invalid("threshold coefficients must be >= 0".into()));
        }
        Ok(())
    }
}

/// Either parameter family accepted by the simulation and trace engines.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSet {
    Global(GlobalParams),
    Threshold(ThresholdParams),
}

impl ParamSet {
    pub fn validate(&self, orders: &OrderSpec) -> Result<()> {
        match self {
            ParamSet::Global(p) => p.validate(orders),
            ParamSet::Threshold(p) => p.validate(orders),
        }
    }
}

impl From<GlobalParams> for ParamSet {
    fn from(p: GlobalParams) -> Self {
        ParamSet::Global(p)
    }
}

impl From<ThresholdParams> for ParamSet {
    fn from(p: ThresholdParams) -> Self {
        ParamSet::Threshold(p)
    }
}
