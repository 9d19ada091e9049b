//! Cross-sectional least-squares regression for conditional expectations.
//!
//! State columns are standardized per node; columns with (numerically) zero
//! variance are dropped, so a deterministic node collapses to the sample
//! mean. The design is the full total-degree polynomial basis in the
//! remaining columns, projected on by Gram-Schmidt. A state column or basis function that is
//! (nearly) a combination of earlier ones is dropped; fewer paths than
//! basis functions is an error.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::paths::PathBundle;

/// Relative residual below which a state column counts as redundant.
const REDUNDANT_TOL: f64 = 1e-3;
/// Relative residual below which a basis function counts as redundant.
const BASIS_TOL: f64 = 1e-6;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Total-degree polynomial basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolyBasis {
    pub degree: usize,
}

impl Default for PolyBasis {
    fn default() -> Self {
        Self { degree: 2 }
    }
}

impl PolyBasis {
    pub fn new(degree: usize) -> Self {
        Self { degree }
    }

    /// Exponent tuples of all monomials of total degree `<= degree` in `d` variables,
    /// constant first.
    pub fn exponents(&self, d: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![0; d]];
        let mut frontier = vec![vec![0; d]];
        for _ in 0..self.degree {
            let mut next = Vec::new();
            for e in &frontier {
                // extend only at or after the last nonzero index: each monomial once
                let start = e.iter().rposition(|&v| v > 0).unwrap_or(0);
                for j in start..d {
                    let mut f = e.clone();
                    f[j] += 1;
                    next.push(f);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }
}

/// Outcome of one node's regression.
#[derive(Debug, Clone)]
pub struct Fit {
    /// Fitted values `[path, target]`.
    pub fitted: Array2<f64>,
    /// Root-mean-square residual per target.
    pub residual_rms: Vec<f64>,
    pub n_columns: usize,
}

/// Regresses each target column on the basis in `state` (`[path, d]`).
pub fn fit(basis: PolyBasis, state: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>, node: usize) -> Result<Fit> {
    let n = state.nrows();
    if targets.nrows() != n {
        return Err(Error::Shape {
            what: "regression targets",
            expected: format!("{n} rows"),
            got: format!("{} rows", targets.nrows()),
        });
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut orth: Vec<Vec<f64>> = Vec::new();
    for col in state.axis_iter(Axis(1)) {
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        if !sd.is_finite() || !mean.is_finite() {
            return Err(Error::domain(
                "regression state",
                format!("non-finite state column at node {node}"),
            ));
        }
        if sd <= 1e-12 * (1.0 + mean.abs()) {
            continue;
        }
        let z: Vec<f64> = col.iter().map(|v| (v - mean) / sd).collect();
        // drop columns (almost) spanned by those already kept
        let mut resid = z.clone();
        for q in &orth {
            let proj = dot(&resid, q);
            for (r, qv) in resid.iter_mut().zip(q) {
                *r -= proj * qv;
            }
        }
        let rn = dot(&resid, &resid).sqrt();
        if rn <= REDUNDANT_TOL * (n as f64).sqrt() {
            continue;
        }
        orth.push(resid.iter().map(|r| r / rn).collect());
        cols.push(z);
    }
    let exps = basis.exponents(cols.len());
    let k = exps.len();
    if n < k {
        return Err(Error::RankDeficient {
            node,
            rank: n,
            columns: k,
        });
    }
    // orthonormalize the monomials in order (Gram-Schmidt, two passes);
    // a monomial numerically inside the span of earlier ones is skipped
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    for e in &exps {
        let mut v: Vec<f64> = (0..n)
            .map(|p| {
                cols.iter()
                    .zip(e)
                    .filter(|(_, &ex)| ex > 0)
                    .map(|(c, &ex)| c[p].powi(ex as i32))
                    .product()
            })
            .collect();
        let norm0 = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for qj in &q {
                let proj = dot(&v, qj);
                for (a, b) in v.iter_mut().zip(qj) {
                    *a -= proj * b;
                }
            }
        }
        let nv = dot(&v, &v).sqrt();
        if nv > BASIS_TOL * norm0 {
            q.push(v.into_iter().map(|a| a / nv).collect());
        }
    }

    let nt = targets.ncols();
    let mut fitted = Array2::zeros((n, nt));
    let mut residual_rms = Vec::with_capacity(nt);
    for t in 0..nt {
        let y: Vec<f64> = targets.column(t).to_vec();
        let mut yhat = vec![0.0; n];
        for qj in &q {
            let c = dot(&y, qj);
            for (h, b) in yhat.iter_mut().zip(qj) {
                *h += c * b;
            }
        }
        let mut ss = 0.0;
        for p in 0..n {
            fitted[[p, t]] = yhat[p];
            ss += (y[p] - yhat[p]).powi(2);
        }
        residual_rms.push((ss / n as f64).sqrt());
    }
    Ok(Fit {
        fitted,
        residual_rms,
        n_columns: q.len(),
    })
}

/// Markov state used as regression input, `[path, node, d]`.
#[derive(Debug, Clone)]
pub struct StateProcess(pub Array3<f64>);

impl StateProcess {
    /// Running sums of the bundle's Brownian increments.
    pub fn brownian(bundle: &PathBundle) -> Self {
        let (np, m, d) = (bundle.n_paths(), bundle.grid().n_steps(), bundle.dim());
        let mut s = Array3::zeros((np, m + 1, d));
        for p in 0..np {
            for i in 0..m {
                for j in 0..d {
                    s[[p, i + 1, j]] = s[[p, i, j]] + bundle.db(p, i, j);
                }
            }
        }
        Self(s)
    }

    /// Stacks `[path, node]` processes as state columns.
    pub fn from_columns(columns: &[&Array2<f64>]) -> Result<Self> {
        let first = columns
            .first()
            .ok_or_else(|| Error::param("state", "need at least one column"))?;
        let (np, nn) = first.dim();
        let mut s = Array3::zeros((np, nn, columns.len()));
        for (j, c) in columns.iter().enumerate() {
            if c.dim() != (np, nn) {
                return Err(Error::Shape {
                    what: "state column",
                    expected: format!("({np}, {nn})"),
                    got: format!("{:?}", c.dim()),
                });
            }
            s.index_axis_mut(Axis(2), j).assign(c);
        }
        Ok(Self(s))
    }

    /// Deterministic (empty) state: every regression is a sample mean.
    pub fn empty(n_paths: usize, n_nodes: usize) -> Self {
        Self(Array3::zeros((n_paths, n_nodes, 0)))
    }

    pub fn node(&self, i: usize) -> ArrayView2<'_, f64> {
        self.0.index_axis(Axis(1), i)
    }

    pub fn n_paths(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.0.shape()[1]
    }
}
