//! Market models and perturbation families.
//!
//! Prices are never materialized: everything is expressed in returns space
//! through `(r, mu, sigma)` and the correlated Brownian motion
//! `W^rho = rho W + rho_perp W_perp`. The bundle's first `k` components are
//! `W`, the next `n` are `W_perp`.
//!
//! `N^eps` and the minimal state price density are integrated in log space,
//! so they stay strictly positive at any step size; with constant
//! coefficients the log-Euler step is exact.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::paths::{ConsumptionStream, PathBundle, PortfolioRule, TimeGrid};
use crate::preferences::{aggregator_partials, bequest_marginal, EzPreferences, UtilityPoint};

/// Coefficients evaluated at one `(t, factor state)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValues {
    pub r: f64,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Coefficient functions `(t, factor state) -> (r, mu, sigma)`.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn n(&self) -> usize;
    fn evaluate(&self, t: f64, factors: &[f64]) -> CoefficientValues;
    /// `Some` when the coefficients do not depend on `(t, state)`.
    fn as_constant(&self) -> Option<CoefficientValues> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantCoefficients(pub CoefficientValues);

impl Coefficients for ConstantCoefficients {
    fn n(&self) -> usize {
        self.0.mu.len()
    }

    fn evaluate(&self, _t: f64, _factors: &[f64]) -> CoefficientValues {
        self.0.clone()
    }

    fn as_constant(&self) -> Option<CoefficientValues> {
        Some(self.0.clone())
    }
}

/// `sigma(F) = sigma_bar * exp(clip(loading * F))`, constant `r` and `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorVolCoefficients {
    pub r: f64,
    pub mu: DVector<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub loading: f64,
    /// Bound on `|loading * F|` keeping sigma away from 0 and infinity.
    pub clip: f64,
}

impl Coefficients for FactorVolCoefficients {
    fn n(&self) -> usize {
        self.mu.len()
    }

    fn evaluate(&self, _t: f64, factors: &[f64]) -> CoefficientValues {
        let f = factors.first().copied().unwrap_or(0.0);
        let s = (self.loading * f).clamp(-self.clip, self.clip).exp();
        CoefficientValues {
            r: self.r,
            mu: self.mu.clone(),
            sigma: &self.sigma_bar * s,
        }
    }

    fn as_constant(&self) -> Option<CoefficientValues> {
        (self.loading == 0.0).then(|| self.evaluate(0.0, &[]))
    }
}

/// Ornstein-Uhlenbeck factor `dF = a (b - F) dt + eta dW_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuFactor {
    pub mean_reversion: f64,
    pub long_run: f64,
    pub vol: f64,
    pub initial: f64,
    /// Index `j < k` of the driving `W` component.
    pub driver: usize,
}

/// Factor values `[path, node, factor]`.
#[derive(Debug, Clone)]
pub struct FactorPaths(pub Array3<f64>);

impl FactorPaths {
    pub fn row_state(&self, path: usize, node: usize) -> Vec<f64> {
        (0..self.0.shape()[2]).map(|j| self.0[[path, node, j]]).collect()
    }

    pub fn n_factors(&self) -> usize {
        self.0.shape()[2]
    }
}

/// Coefficients plus the Brownian correlation structure.
#[derive(Debug, Clone)]
pub struct MarketModel {
    n: usize,
    k: usize,
    coeffs: Arc<dyn Coefficients>,
    factors: Vec<OuFactor>,
    rho: DMatrix<f64>,
    rho_perp: DMatrix<f64>,
    max_condition: f64,
}

/// Evaluated coefficients together with `sigma^{-1}`.
#[derive(Debug, Clone)]
pub struct LocalCoefficients {
    pub r: f64,
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sigma_inv: DMatrix<f64>,
}

impl LocalCoefficients {
    /// Market price of risk `sigma^{-1} mu`.
    pub fn market_price_of_risk(&self) -> DVector<f64> {
        &self.sigma_inv * &self.mu
    }
}

pub const DEFAULT_MAX_CONDITION: f64 = 1e8;

impl MarketModel {
    pub fn new(coeffs: Arc<dyn Coefficients>, factors: Vec<OuFactor>, rho: DMatrix<f64>, rho_perp: DMatrix<f64>) -> Result<Self> {
        let n = coeffs.n();
        if n == 0 {
            return Err(Error::param("n", "need at least one risky asset"));
        }
        let k = rho.ncols();
        if rho.nrows() != n || rho_perp.shape() != (n, n) {
            return Err(Error::Shape {
                what: "correlation",
                expected: format!("rho {n}x{k}, rho_perp {n}x{n}"),
                got: format!("rho {:?}, rho_perp {:?}", rho.shape(), rho_perp.shape()),
            });
        }
        let gram = &rho * rho.transpose() + &rho_perp * rho_perp.transpose();
        let err = (gram - DMatrix::identity(n, n)).abs().max();
        if err > 1e-10 {
            return Err(Error::param(
                "rho",
                format!("rho rho' + rho_perp rho_perp' must be I (error {err:.3e})"),
            ));
        }
        for f in &factors {
            if f.driver >= k {
                return Err(Error::param(
                    "factor.driver",
                    format!("driver {} must be < k = {k}", f.driver),
                ));
            }
        }
        Ok(Self {
            n,
            k,
            coeffs,
            factors,
            rho,
            rho_perp,
            max_condition: DEFAULT_MAX_CONDITION,
        })
    }

    /// Constant-coefficient market with `W^rho = W_perp` (no extra factors).
    pub fn constant(r: f64, mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let n = mu.len();
        if sigma.shape() != (n, n) {
            return Err(Error::Shape {
                what: "sigma",
                expected: format!("{n}x{n}"),
                got: format!("{:?}", sigma.shape()),
            });
        }
        Self::new(
            Arc::new(ConstantCoefficients(CoefficientValues { r, mu, sigma })),
            vec![],
            DMatrix::zeros(n, 0),
            DMatrix::identity(n, n),
        )
    }

    /// One-asset constant market.
    pub fn constant_1d(r: f64, mu: f64, sigma: f64) -> Result<Self> {
        Self::constant(r, DVector::from_element(1, mu), DMatrix::from_element(1, 1, sigma))
    }

    pub fn with_max_condition(mut self, c: f64) -> Self {
        self.max_condition = c;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Brownian dimension `k + n` the model consumes.
    pub fn brownian_dim(&self) -> usize {
        self.k + self.n
    }

    pub fn factors(&self) -> &[OuFactor] {
        &self.factors
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    pub fn rho_perp(&self) -> &DMatrix<f64> {
        &self.rho_perp
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coeffs
    }

    pub fn as_constant(&self) -> Option<CoefficientValues> {
        self.coeffs.as_constant()
    }

    /// Evaluates and validates the coefficients at `(t, state)`.
    pub fn coefficients_at(&self, t: f64, factors: &[f64]) -> Result<LocalCoefficients> {
        let CoefficientValues { r, mu, sigma } = self.coeffs.evaluate(t, factors);
        if !(r.is_finite() && mu.iter().all(|v| v.is_finite()) && sigma.iter().all(|v| v.is_finite())) {
            return Err(Error::domain(
                "market coefficients",
                format!("non-finite value at t={t}, state={factors:?}"),
            ));
        }
        if r < 0.0 {
            return Err(Error::domain(
                "interest rate",
                format!("r={r} < 0 at t={t}, state={factors:?}"),
            ));
        }
        let singular = |cond: f64| Error::SingularVolatility {
            t,
            state: factors.to_vec(),
            cond,
        };
        let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| singular(f64::INFINITY))?;
        // Frobenius-norm condition estimate
        let cond = sigma.norm() * sigma_inv.norm();
        if !(cond <= self.max_condition) {
            return Err(singular(cond));
        }
        Ok(LocalCoefficients { r, mu, sigma, sigma_inv })
    }

    /// Simulates the factors on the bundle's grid (Euler). With no factors
    /// the result has a zero-width last axis.
    pub fn factor_paths(&self, bundle: &PathBundle) -> FactorPaths {
        let grid = bundle.grid();
        let m = grid.n_steps();
        let nf = self.factors.len();
        let mut out = Array3::zeros((bundle.n_paths(), m + 1, nf));
        if nf == 0 {
            return FactorPaths(out);
        }
        let dt = grid.dt();
        for p in 0..bundle.n_paths() {
            for (j, f) in self.factors.iter().enumerate() {
                let mut x = f.initial;
                out[[p, 0, j]] = x;
                for i in 0..m {
                    x += f.mean_reversion * (f.long_run - x) * dt + f.vol * bundle.db(p, i, f.driver);
                    out[[p, i + 1, j]] = x;
                }
            }
        }
        FactorPaths(out)
    }

    /// `dW^rho = rho dW + rho_perp dW_perp`, shape `[path, step, n]`.
    pub fn w_rho_increments(&self, bundle: &PathBundle) -> Result<Array3<f64>> {
        if bundle.dim() != self.brownian_dim() {
            return Err(Error::Shape {
                what: "bundle dimension",
                expected: format!("k + n = {}", self.brownian_dim()),
                got: format!("{}", bundle.dim()),
            });
        }
        let (np, m) = (bundle.n_paths(), bundle.grid().n_steps());
        let mut out = Array3::zeros((np, m, self.n));
        for p in 0..np {
            for s in 0..m {
                for i in 0..self.n {
                    let mut v = 0.0;
                    for j in 0..self.k {
                        v += self.rho[(i, j)] * bundle.db(p, s, j);
                    }
                    for j in 0..self.n {
                        v += self.rho_perp[(i, j)] * bundle.db(p, s, self.k + j);
                    }
                    out[[p, s, i]] = v;
                }
            }
        }
        Ok(out)
    }
}

/// Which built-in family, with its perturbation knobs.
#[derive(Clone)]
pub enum FamilyKind {
    /// Constant coefficients with `r + a eps`, `mu + b eps`, `sigma (1 + c eps)`.
    ConstantShift {
        r: f64,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        rate_shift: f64,
        drift_shift: DVector<f64>,
        vol_scale: f64,
    },
    /// One-factor stochastic volatility: `sigma = sigma_bar exp(eps * loading * F)`
    /// with an OU factor `F` driven by `W`, correlated with the asset through `rho`.
    FactorVol {
        r: f64,
        mu: f64,
        sigma_bar: f64,
        rho: f64,
        factor: OuFactor,
        loading: f64,
        clip: f64,
    },
    /// User-supplied map `eps -> model`.
    Custom(Arc<dyn Fn(f64) -> Result<MarketModel> + Send + Sync>),
}

impl fmt::Debug for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FamilyKind::ConstantShift {
                r,
                mu,
                sigma,
                rate_shift,
                drift_shift,
                vol_scale,
            } => f
                .debug_struct("ConstantShift")
                .field("r", r)
                .field("mu", &mu.as_slice())
                .field("sigma", &sigma.as_slice())
                .field("rate_shift", rate_shift)
                .field("drift_shift", &drift_shift.as_slice())
                .field("vol_scale", vol_scale)
                .finish(),
            FamilyKind::FactorVol {
                r,
                mu,
                sigma_bar,
                rho,
                loading,
                ..
            } => f
                .debug_struct("FactorVol")
                .field("r", r)
                .field("mu", mu)
                .field("sigma_bar", sigma_bar)
                .field("rho", rho)
                .field("loading", loading)
                .finish(),
            FamilyKind::Custom(_) => f.write_str("Custom"),
        }
    }
}

/// Markets indexed by `eps in (-eps0, eps0)`, with `eps = 0` the base model.
#[derive(Debug, Clone)]
pub struct PerturbationFamily {
    kind: FamilyKind,
    eps0: f64,
    base: MarketModel,
}

impl PerturbationFamily {
    pub fn new(kind: FamilyKind, eps0: f64) -> Result<Self> {
        if !(eps0 > 0.0) {
            return Err(Error::param("eps0", format!("must be positive, got {eps0}")));
        }
        let base = build_model(&kind, 0.0)?;
        Ok(Self { kind, eps0, base })
    }

    /// Pure rate shift `r + a eps` on a one-asset Black-Scholes market.
    pub fn rate_shift(r: f64, mu: f64, sigma: f64, a: f64, eps0: f64) -> Result<Self> {
        Self::constant_shift_1d(r, mu, sigma, a, 0.0, 0.0, eps0)
    }

    /// Pure drift shift `mu + b eps` on a one-asset Black-Scholes market.
    pub fn drift_shift(r: f64, mu: f64, sigma: f64, b: f64, eps0: f64) -> Result<Self> {
        Self::constant_shift_1d(r, mu, sigma, 0.0, b, 0.0, eps0)
    }

    pub fn constant_shift_1d(r: f64, mu: f64, sigma: f64, a: f64, b: f64, c: f64, eps0: f64) -> Result<Self> {
        Self::new(
            FamilyKind::ConstantShift {
                r,
                mu: DVector::from_element(1, mu),
                sigma: DMatrix::from_element(1, 1, sigma),
                rate_shift: a,
                drift_shift: DVector::from_element(1, b),
                vol_scale: c,
            },
            eps0,
        )
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn eps0(&self) -> f64 {
        self.eps0
    }

    pub fn base(&self) -> &MarketModel {
        &self.base
    }

    pub fn model(&self, eps: f64) -> Result<MarketModel> {
        if !(eps.abs() < self.eps0) {
            return Err(Error::param(
                "eps",
                format!("|eps| = {} must be < eps0 = {}", eps.abs(), self.eps0),
            ));
        }
        if eps == 0.0 {
            return Ok(self.base.clone());
        }
        let m = build_model(&self.kind, eps)?;
        if m.n() != self.base.n() || m.k() != self.base.k() || m.rho() != self.base.rho() {
            return Err(Error::param(
                "family",
                "perturbed models must share n, k and the correlation structure",
            ));
        }
        Ok(m)
    }

    /// True when every member has constant coefficients.
    pub fn is_constant(&self) -> bool {
        matches!(self.kind, FamilyKind::ConstantShift { .. })
    }
}

fn build_model(kind: &FamilyKind, eps: f64) -> Result<MarketModel> {
    match kind {
        FamilyKind::ConstantShift {
            r,
            mu,
            sigma,
            rate_shift,
            drift_shift,
            vol_scale,
        } => {
            if drift_shift.len() != mu.len() {
                return Err(Error::param("drift_shift", "length must match mu"));
            }
            MarketModel::constant(r + rate_shift * eps, mu + drift_shift * eps, sigma * (1.0 + vol_scale * eps))
        }
        FamilyKind::FactorVol {
            r,
            mu,
            sigma_bar,
            rho,
            factor,
            loading,
            clip,
        } => {
            if !(rho.abs() <= 1.0) {
                return Err(Error::param("rho", format!("|rho| must be <= 1, got {rho}")));
            }
            let coeffs = FactorVolCoefficients {
                r: *r,
                mu: DVector::from_element(1, *mu),
                sigma_bar: DMatrix::from_element(1, 1, *sigma_bar),
                loading: eps * loading,
                clip: *clip,
            };
            MarketModel::new(
                Arc::new(coeffs),
                vec![OuFactor { driver: 0, ..*factor }],
                DMatrix::from_element(1, 1, *rho),
                DMatrix::from_element(1, 1, (1.0 - rho * rho).sqrt()),
            )
        }
        FamilyKind::Custom(f) => f(eps),
    }
}

/// `lambda^eps = (sigma0')^{-1} (sigma_eps^{-1} mu_eps - sigma0^{-1} mu0)` at `(t, state)`.
pub fn lambda_eps(family: &PerturbationFamily, eps: f64, t: f64, factors: &[f64]) -> Result<DVector<f64>> {
    let base = family.base().coefficients_at(t, factors)?;
    let pert = family.model(eps)?.coefficients_at(t, factors)?;
    Ok(lambda_from(&base, &pert))
}

fn lambda_from(base: &LocalCoefficients, pert: &LocalCoefficients) -> DVector<f64> {
    base.sigma_inv.transpose() * (pert.market_price_of_risk() - base.market_price_of_risk())
}

/// Per-path evaluation cache: constant models are evaluated once.
struct CoeffCache<'a> {
    model: &'a MarketModel,
    constant: Option<LocalCoefficients>,
}

impl<'a> CoeffCache<'a> {
    fn new(model: &'a MarketModel) -> Result<Self> {
        let constant = match model.as_constant() {
            Some(_) => Some(model.coefficients_at(0.0, &[])?),
            None => None,
        };
        Ok(Self { model, constant })
    }

    fn at(&self, t: f64, factors: &[f64]) -> Result<LocalCoefficients> {
        match &self.constant {
            Some(c) => Ok(c.clone()),
            None => self.model.coefficients_at(t, factors),
        }
    }
}

fn tag_path(e: Error, path: usize, node: usize) -> Error {
    match e {
        Error::Domain { what, detail } => Error::Domain {
            what,
            detail: format!("{detail} (path {path}, node {node})"),
        },
        other => other,
    }
}

/// `dN = N ((r0 - r_eps) dt - lambda^eps dR)`, `N_0 = 1`, where
/// `dR = mu0 dt + sigma0 dW^rho`. Log-Euler; `[path, node]`.
pub fn n_eps_path(family: &PerturbationFamily, eps: f64, bundle: &PathBundle) -> Result<Array2<f64>> {
    let base = family.base();
    let pert = family.model(eps)?;
    let grid = bundle.grid();
    let m = grid.n_steps();
    let dt = grid.dt();
    let factors = base.factor_paths(bundle);
    let dw = base.w_rho_increments(bundle)?;
    let base_cache = CoeffCache::new(base)?;
    let pert_cache = CoeffCache::new(&pert)?;
    let n = base.n();
    let rows: Vec<Result<Vec<f64>>> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut out = vec![1.0; m + 1];
            let mut log_n = 0.0;
            for i in 0..m {
                let t = grid.t(i);
                let fs = factors.row_state(p, i);
                let c0 = base_cache.at(t, &fs).map_err(|e| tag_path(e, p, i))?;
                let ce = pert_cache.at(t, &fs).map_err(|e| tag_path(e, p, i))?;
                let lam = lambda_from(&c0, &ce);
                let mut d_r_term = 0.0;
                for a in 0..n {
                    let mut dr = c0.mu[a] * dt;
                    for b in 0..n {
                        dr += c0.sigma[(a, b)] * dw[[p, i, b]];
                    }
                    d_r_term += lam[a] * dr;
                }
                let vol = c0.sigma.transpose() * &lam;
                log_n += (c0.r - ce.r) * dt - d_r_term - 0.5 * vol.norm_squared() * dt;
                out[i + 1] = log_n.exp();
                if !out[i + 1].is_finite() || out[i + 1] <= 0.0 {
                    return Err(Error::NonFinite {
                        what: "N^eps",
                        path: p,
                        node: i + 1,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    collect_rows(rows, m + 1)
}

fn collect_rows(rows: Vec<Result<Vec<f64>>>, width: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((rows.len(), width));
    for (p, r) in rows.into_iter().enumerate() {
        out.row_mut(p).assign(&ndarray::Array1::from(r?));
    }
    Ok(out)
}

/// Minimal state price density `E(-int r dt - int sigma^{-1} mu dW^rho)`, `[path, node]`.
pub fn minimal_spd_path(model: &MarketModel, bundle: &PathBundle) -> Result<Array2<f64>> {
    let grid = bundle.grid();
    let m = grid.n_steps();
    let dt = grid.dt();
    let factors = model.factor_paths(bundle);
    let dw = model.w_rho_increments(bundle)?;
    let cache = CoeffCache::new(model)?;
    let rows: Vec<Result<Vec<f64>>> = (0..bundle.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut out = vec![1.0; m + 1];
            let mut log_d = 0.0;
            for i in 0..m {
                let t = grid.t(i);
                let co = cache.at(t, &factors.row_state(p, i)).map_err(|e| tag_path(e, p, i))?;
                let mpr = co.market_price_of_risk();
                let mut shock = 0.0;
                for j in 0..model.n() {
                    shock += mpr[j] * dw[[p, i, j]];
                }
                log_d += -co.r * dt - shock - 0.5 * mpr.norm_squared() * dt;
                out[i + 1] = log_d.exp();
            }
            Ok(out)
        })
        .collect();
    collect_rows(rows, m + 1)
}

/// Utility-gradient deflator `C exp(int_0^t d_u f ds) d_c f(c_t, U_t)` with
/// `C` chosen so the value at `t = 0` is `y`. The time integral is
/// left-point. On the terminal node the bequest lump is priced by the
/// marginal bequest utility `U_T'(c_T)`; for the optimal stream this is the
/// continuous extension of `d_c f` along the rate.
pub fn utility_gradient_density(
    prefs: &EzPreferences,
    c: &ConsumptionStream,
    u_path: &Array2<f64>,
    y: f64,
    grid: &TimeGrid,
) -> Result<Array2<f64>> {
    if !(y > 0.0) {
        return Err(Error::param("y", format!("must be positive, got {y}")));
    }
    let cv = c.values();
    if cv.dim() != u_path.dim() || cv.ncols() != grid.n_nodes() {
        return Err(Error::Shape {
            what: "utility gradient inputs",
            expected: format!("({}, {})", cv.nrows(), grid.n_nodes()),
            got: format!("c {:?}, u {:?}", cv.dim(), u_path.dim()),
        });
    }
    let m = grid.n_steps();
    let dt = grid.dt();
    let rows: Vec<Result<Vec<f64>>> = (0..cv.nrows())
        .into_par_iter()
        .map(|p| {
            let mut out = vec![0.0; m + 1];
            let mut acc = 0.0f64;
            for i in 0..m {
                let pt = UtilityPoint::new(cv[[p, i]], u_path[[p, i]]);
                let (dc, du) = aggregator_partials(prefs, pt).map_err(|e| tag_path(e, p, i))?;
                out[i] = acc.exp() * dc;
                acc += du * dt;
            }
            out[m] = acc.exp() * bequest_marginal(prefs, cv[[p, m]]).map_err(|e| tag_path(e, p, m))?;
            let scale = y / out[0];
            for v in out.iter_mut() {
                *v *= scale;
            }
            Ok(out)
        })
        .collect();
    collect_rows(rows, m + 1)
}

/// Portfolio that finances `c / N^eps` in the `eps` market from the base
/// weights `pi0`: `pi_eps = (sigma_eps')^{-1} sigma0' (pi0 + lambda^eps)`.
#[derive(Debug, Clone)]
pub struct CandidatePortfolio {
    pub family: PerturbationFamily,
    pub eps: f64,
    pub base_weights: DVector<f64>,
    model: MarketModel,
}

impl CandidatePortfolio {
    pub fn new(family: &PerturbationFamily, eps: f64, base_weights: DVector<f64>) -> Result<Self> {
        Ok(Self {
            model: family.model(eps)?,
            family: family.clone(),
            eps,
            base_weights,
        })
    }
}

impl PortfolioRule for CandidatePortfolio {
    fn weights(&self, t: f64, factors: &[f64]) -> Result<DVector<f64>> {
        let c0 = self.family.base().coefficients_at(t, factors)?;
        let ce = self.model.coefficients_at(t, factors)?;
        let lam = lambda_from(&c0, &ce);
        Ok(ce.sigma_inv.transpose() * c0.sigma.transpose() * (&self.base_weights + lam))
    }
}
