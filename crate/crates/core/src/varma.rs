//! VARMA representation of the GNGARCH recursions.
//!
//! The squared-return process satisfies a VARMA driven by the martingale
//! differences `η_t = X_t² - h_t`, and the vechl-vectorised cross products
//! satisfy an analogous VARMA whose neighbour interactions are realised by
//! the stage-dependent linear maps `T_r`. Both identities are algebraic
//! rearrangements of the model recursions, so on any simulated path the
//! residuals sit at floating-point roundoff; this module builds the transfer
//! matrices and checks the identities path-wise.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{GngarchError, Result};
use crate::graph::NetworkMasks;
use crate::params::{GlobalParams, OrderSpec};

/// Strictly-lower-triangular column-major vectorisation:
/// `(M_21, M_31, ..., M_d1, M_32, ..., M_d(d-1))`.
pub fn vechl(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let d = m.nrows();
    if d != m.ncols() {
        return Err(GngarchError::Dimension("vechl needs a square matrix".into()));
    }
    let mut v = Vec::with_capacity(d * (d - 1) / 2);
    for n in 0..d {
        for mm in (n + 1)..d {
            v.push(m[(mm, n)]);
        }
    }
    Ok(DVector::from_vec(v))
}

/// Index mapping for strict lower-triangle pairs, 1-based on both sides:
/// `tau(m, n) = (n-1)d + (m-n) - n(n-1)/2` for `1 <= n < m <= d`, a
/// bijection onto `1..=d(d-1)/2`.
pub fn tau(d: usize, m: usize, n: usize) -> Result<usize> {
    if n < 1 || m <= n || m > d {
        return Err(GngarchError::Invalid(format!(
            "tau requires 1 <= n < m <= d, got (m, n) = ({m}, {n}) with d = {d}"
        )));
    }
    Ok((n - 1) * d + (m - n) - n * (n - 1) / 2)
}

/// Bijection between strict lower-triangle pairs and linear indices for a
/// fixed dimension, with the inverse map precomputed.
#[derive(Debug, Clone)]
pub struct IndexMapTau {
    d: usize,
    /// `inverse[k]` is the 1-based pair `(m, n)` with `tau(m, n) = k + 1`.
    inverse: Vec<(usize, usize)>,
}

impl IndexMapTau {
    pub fn new(d: usize) -> Result<Self> {
        if d < 2 {
            return Err(GngarchError::Invalid("tau map needs d >= 2".into()));
        }
        let len = d * (d - 1) / 2;
        let mut inverse = vec![(0, 0); len];
        for n in 1..=d {
            for m in (n + 1)..=d {
                inverse[tau(d, m, n)? - 1] = (m, n);
            }
        }
        Ok(Self { d, inverse })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Length of the vechl vector, `d(d-1)/2`.
    pub fn len(&self) -> usize {
        self.inverse.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inverse.is_empty()
    }

    /// 1-based `tau(m, n)`.
    pub fn forward(&self, m: usize, n: usize) -> Result<usize> {
        tau(self.d, m, n)
    }

    /// 1-based pair for a 1-based linear index.
    pub fn inverse(&self, idx: usize) -> Result<(usize, usize)> {
        self.inverse
            .get(idx.wrapping_sub(1))
            .copied()
            .ok_or_else(|| GngarchError::Invalid(format!("tau index {idx} out of range")))
    }

    /// Zero-based position in a vechl vector of the unordered 0-based pair
    /// `{i, j}`, `i != j`. This is the single place the 1-based map meets the
    /// 0-based storage.
    pub fn position(&self, i: usize, j: usize) -> Result<usize> {
        let (hi, lo) = if i > j { (i, j) } else { (j, i) };
        Ok(tau(self.d, hi + 1, lo + 1)? - 1)
    }
}

/// Square sparse matrix in row-major adjacency form; rows hold sorted
/// `(column, value)` pairs. `T_r` has at most `2(d-1)` nonzeros per row, so
/// a dense `d(d-1)/2` square quickly becomes wasteful.
#[derive(Debug, Clone)]
pub struct SparseRowMat {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRowMat {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, rows: vec![Vec::new(); dim] }
    }

    pub fn identity_scaled(dim: usize, scale: f64) -> Self {
        let rows = (0..dim).map(|i| vec![(i, scale)]).collect();
        Self { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by(|probe| probe.0.cmp(&j))
            .map(|pos| self.rows[i][pos].1)
            .unwrap_or(0.0)
    }

    fn from_row_maps(dim: usize, maps: Vec<BTreeMap<usize, f64>>) -> Self {
        let rows = maps
            .into_iter()
            .map(|m| m.into_iter().filter(|&(_, v)| v != 0.0).collect())
            .collect();
        Self { dim, rows }
    }

    /// `self * v`.
    pub fn mul_vec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim {
            return Err(GngarchError::Dimension(format!(
                "sparse matrix of dim {} applied to vector of len {}",
                self.dim,
                v.len()
            )));
        }
        let mut out = DVector::zeros(self.dim);
        for (i, row) in self.rows.iter().enumerate() {
            out[i] = row.iter().map(|&(j, w)| w * v[j]).sum();
        }
        Ok(out)
    }

    /// `alpha * I + sum_i scale_i * mats_i`, merged sparsely.
    pub fn affine_combination(dim: usize, alpha: f64, terms: &[(f64, &SparseRowMat)]) -> Self {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); dim];
        if alpha != 0.0 {
            for (i, m) in maps.iter_mut().enumerate() {
                m.insert(i, alpha);
            }
        }
        for &(scale, mat) in terms {
            if scale == 0.0 {
                continue;
            }
            for (i, row) in mat.rows.iter().enumerate() {
                for &(j, w) in row {
                    *maps[i].entry(j).or_insert(0.0) += scale * w;
                }
            }
        }
        Self::from_row_maps(dim, maps)
    }

    pub fn add(&self, other: &SparseRowMat) -> Self {
        Self::affine_combination(self.dim, 0.0, &[(1.0, self), (1.0, other)])
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[(i, j)] = w;
            }
        }
        m
    }
}

/// Build the stage-`r` pair-interaction map `T_r`.
///
/// Row `tau(i, j)` applied to a vechl vector of cross products yields
/// `Σ_{u ∈ N_r(i), u != j} w_iu X_u X_j + Σ_{v ∈ N_r(j), v != i} w_jv X_i X_v`:
/// each `u`-term lands in the column of the pair `{u, j}` with weight `w_iu`,
/// each `v`-term in the column of `{v, i}` with weight `w_jv`.
pub fn build_t(masks: &NetworkMasks, r: usize) -> Result<SparseRowMat> {
    let d = masks.node_count();
    if d < 2 {
        return Err(GngarchError::Invalid("T_r needs at least two nodes".into()));
    }
    let mask = masks.mask(r)?;
    let map = IndexMapTau::new(d)?;
    let dim = map.len();
    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); dim];
    for j in 0..d {
        for i in (j + 1)..d {
            let row = &mut rows[map.position(i, j)?];
            for u in 0..d {
                let w_iu = mask[(i, u)];
                if w_iu != 0.0 && u != j {
                    *row.entry(map.position(u, j)?).or_insert(0.0) += w_iu;
                }
                let w_jv = mask[(j, u)];
                if w_jv != 0.0 && u != i {
                    *row.entry(map.position(u, i)?).or_insert(0.0) += w_jv;
                }
            }
        }
    }
    Ok(SparseRowMat::from_row_maps(dim, rows))
}

/// The transfer matrices of the two VARMA forms.
///
/// Dense side (dimension d): `Φ_k = α_k I + Σ_r β_kr (W⊙S_r)`,
/// `Θ_ℓ = γ_ℓ I + Σ_r' δ_ℓr' (W⊙S_r')` and the combined `Ψ_m`. Pair side
/// (dimension d(d-1)/2): `Π_k = α_k I + ½ Σ_r β_kr T_r`,
/// `Λ_ℓ = γ_ℓ I + ½ Σ_r' δ_ℓr' T_r'` and the combined `Ω_m`.
#[derive(Debug, Clone)]
pub struct TransferMatrices {
    pub alpha0: f64,
    pub orders: OrderSpec,
    pub phi: Vec<DMatrix<f64>>,
    pub theta: Vec<DMatrix<f64>>,
    pub psi: Vec<DMatrix<f64>>,
    pub pi: Vec<SparseRowMat>,
    pub lambda: Vec<SparseRowMat>,
    pub omega: Vec<SparseRowMat>,
    /// `T_r` per stage actually referenced by the orders.
    pub t_r: BTreeMap<usize, SparseRowMat>,
}

pub fn build_transfer(
    params: &GlobalParams,
    orders: &OrderSpec,
    masks: &NetworkMasks,
) -> Result<TransferMatrices> {
    params.validate(orders)?;
    let d = masks.node_count();
    let pair_dim = d * (d - 1) / 2;

    let mut t_r = BTreeMap::new();
    for r in 1..=orders.max_stage() {
        t_r.insert(r, build_t(masks, r)?);
    }

    let dense_block = |own: f64, coefs: &[f64]| -> Result<DMatrix<f64>> {
        let mut m = DMatrix::identity(d, d) * own;
        for (r_idx, &c) in coefs.iter().enumerate() {
            if c != 0.0 {
                m += masks.mask(r_idx + 1)? * c;
            }
        }
        Ok(m)
    };
    let pair_block = |own: f64, coefs: &[f64]| -> SparseRowMat {
        let terms: Vec<(f64, &SparseRowMat)> = coefs
            .iter()
            .enumerate()
            .map(|(r_idx, &c)| (0.5 * c, t_r.get(&(r_idx + 1)).expect("stage built")))
            .collect();
        SparseRowMat::affine_combination(pair_dim, own, &terms)
    };

    let mut phi = Vec::with_capacity(orders.q);
    let mut pi = Vec::with_capacity(orders.q);
    for k in 0..orders.q {
        phi.push(dense_block(params.alpha[k], &params.beta[k])?);
        pi.push(pair_block(params.alpha[k], &params.beta[k]));
    }
    let mut theta = Vec::with_capacity(orders.p);
    let mut lambda = Vec::with_capacity(orders.p);
    for l in 0..orders.p {
        theta.push(dense_block(params.gamma[l], &params.delta[l])?);
        lambda.push(pair_block(params.gamma[l], &params.delta[l]));
    }

    // Ψ_m / Ω_m: sum of both blocks up to min(p, q), then whichever side
    // still has lags.
    let u = orders.max_lag();
    let mut psi = Vec::with_capacity(u);
    let mut omega = Vec::with_capacity(u);
    for m in 1..=u {
        let has_phi = m <= orders.q;
        let has_theta = m <= orders.p;
        let (pm, om) = match (has_phi, has_theta) {
            (true, true) => (&phi[m - 1] + &theta[m - 1], pi[m - 1].add(&lambda[m - 1])),
            (true, false) => (phi[m - 1].clone(), pi[m - 1].clone()),
            (false, true) => (theta[m - 1].clone(), lambda[m - 1].clone()),
            (false, false) => unreachable!("m <= max(p, q)"),
        };
        psi.push(pm);
        omega.push(om);
    }

    Ok(TransferMatrices {
        alpha0: params.alpha0,
        orders: orders.clone(),
        phi,
        theta,
        psi,
        pi,
        lambda,
        omega,
        t_r,
    })
}

/// Maximum absolute residuals of the two VARMA identities evaluated
/// path-wise on aligned `(X_t, h_t, Σ_t)` arrays (column/entry `t` of each
/// input refers to the same time step).
pub fn verify_varma_identity(
    returns: &DMatrix<f64>,
    variances: &DMatrix<f64>,
    covariances: &[DMatrix<f64>],
    transfer: &TransferMatrices,
) -> Result<(f64, f64)> {
    let d = returns.nrows();
    let t_len = returns.ncols();
    if variances.nrows() != d || variances.ncols() != t_len || covariances.len() != t_len {
        return Err(GngarchError::Dimension(
            "returns, variances and covariance trace must be time-aligned".into(),
        ));
    }
    let orders = &transfer.orders;
    let u = orders.max_lag();
    if t_len <= u {
        return Err(GngarchError::InsufficientHistory { needed: u + 1, got: t_len });
    }

    let x2: Vec<DVector<f64>> = (0..t_len)
        .map(|t| {
            let c = returns.column(t);
            c.component_mul(&c)
        })
        .collect();
    let eta: Vec<DVector<f64>> =
        (0..t_len).map(|t| &x2[t] - variances.column(t).into_owned()).collect();
    let v_x: Vec<DVector<f64>> = (0..t_len)
        .map(|t| {
            let c = returns.column(t).into_owned();
            vechl(&(&c * c.transpose()))
        })
        .collect::<Result<_>>()?;
    let v_eta: Vec<DVector<f64>> = (0..t_len)
        .map(|t| Ok(&v_x[t] - vechl(&covariances[t])?))
        .collect::<Result<_>>()?;

    let pair_dim = d * (d - 1) / 2;
    let mut max_var_resid = 0.0f64;
    let mut max_cov_resid = 0.0f64;
    for t in u..t_len {
        let mut rhs = DVector::from_element(d, transfer.alpha0);
        for m in 1..=u {
            rhs += &transfer.psi[m - 1] * &x2[t - m];
        }
        rhs += &eta[t];
        for l in 1..=orders.p {
            rhs -= &transfer.theta[l - 1] * &eta[t - l];
        }
        max_var_resid = max_var_resid.max((&x2[t] - rhs).abs().max());

        if pair_dim == 0 {
            continue;
        }
        let mut rhs_pair = DVector::from_element(pair_dim, transfer.alpha0);
        for m in 1..=u {
            rhs_pair += transfer.omega[m - 1].mul_vec(&v_x[t - m])?;
        }
        rhs_pair += &v_eta[t];
        for l in 1..=orders.p {
            rhs_pair -= transfer.lambda[l - 1].mul_vec(&v_eta[t - l])?;
        }
        max_cov_resid = max_cov_resid.max((&v_x[t] - rhs_pair).abs().max());
    }
    Ok((max_var_resid, max_cov_resid))
}
