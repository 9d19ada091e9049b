//! Value brackets.
//!
//! The unperturbed optimizer comes from an exact constant-coefficient
//! oracle (constant weight, deterministic consumption-wealth ratio, a scalar
//! ODE for the value coefficient). It is kept in policy form and
//! re-simulated under every perturbed market, which yields
//!
//! * a primal lower bound: utility of `c^eps = clamp(c_hat / N^eps)`,
//!   financed by the candidate portfolio;
//! * a dual upper bound: `V_0(D_hat N^eps) + x y`, with `D_hat` the
//!   utility-gradient density of the optimizer.

use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;

use crate::bsde::{evaluate_dual, evaluate_utility, SolverOptions, UtilityEvaluation};
use crate::error::{Error, Result};
use crate::market::{n_eps_path, utility_gradient_density, CandidatePortfolio, MarketModel, PerturbationFamily};
use crate::paths::{
    clock_integral, simulate_wealth, ConstantWeights, ConsumptionPolicy, ConsumptionStream, PathBundle, TimeGrid, WealthPath,
};
use crate::preferences::EzPreferences;
use crate::regression::StateProcess;

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const ODE_STEPS: usize = 4000;

/// Golden-section minimization on `[a, b]`; returns `(argmin, min, trace)`.
pub(crate) fn golden_min(
    mut f: impl FnMut(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    iters: usize,
) -> Result<(f64, f64, Vec<(f64, f64)>)> {
    let mut trace = Vec::with_capacity(iters + 2);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    trace.push((c, fc));
    trace.push((d, fd));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
            trace.push((c, fc));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
            trace.push((d, fd));
        }
    }
    Ok(if fc < fd { (c, fc, trace) } else { (d, fd, trace) })
}

/// Constant-coefficient data extracted from a model.
#[derive(Debug, Clone)]
struct ConstantMarket {
    r: f64,
    mu: DVector<f64>,
    cov: DMatrix<f64>,
}

impl ConstantMarket {
    fn of(model: &MarketModel) -> Result<Self> {
        let c = model
            .as_constant()
            .ok_or_else(|| Error::param("model", "the oracle needs constant coefficients"))?;
        // validates r >= 0 and sigma
        model.coefficients_at(0.0, &[])?;
        let cov = &c.sigma * c.sigma.transpose();
        Ok(Self { r: c.r, mu: c.mu, cov })
    }

    /// `r + pi.mu - gamma/2 pi' Sigma pi`: certainty-equivalent growth of the portfolio.
    fn growth(&self, gamma: f64, pi: &DVector<f64>) -> f64 {
        self.r + pi.dot(&self.mu) - 0.5 * gamma * (pi.transpose() * &self.cov * pi)[(0, 0)]
    }
}

/// Consumption-wealth ratio rule used by the value-coefficient ODE.
enum Ratio<'a> {
    Optimal,
    Given(&'a dyn Fn(f64) -> f64),
}

/// Value coefficient `A` on `n_out + 1` equally spaced nodes of `[0, T]`,
/// where `U = A X^{1-gamma}/(1-gamma)`, `A(T) = 1`, and
/// `A' = delta theta A - delta theta k^p A^{1-1/theta} - (1-gamma) A (g - k)`.
fn value_coefficient(
    prefs: &EzPreferences,
    growth: f64,
    ratio: &Ratio<'_>,
    horizon: f64,
    n_out: usize,
    total_steps: usize,
) -> Result<Vec<f64>> {
    let (d, th, p, g1) = (prefs.delta(), prefs.theta(), prefs.p(), 1.0 - prefs.gamma());
    let sub = (total_steps / n_out).max(1);
    let h = horizon / (n_out * sub) as f64;
    // a given ratio is frozen at the substep midpoint
    let rhs = |fixed: Option<f64>, a: f64| {
        let k = fixed.unwrap_or_else(|| d.powf(prefs.psi()) * a.powf(-prefs.psi() / th));
        d * th * a - d * th * k.powf(p) * a.powf(1.0 - 1.0 / th) - g1 * a * (growth - k)
    };
    let mut out = vec![0.0; n_out + 1];
    let mut a = 1.0;
    out[n_out] = a;
    for j in (0..n_out).rev() {
        for s in 0..sub {
            let t = horizon * (j + 1) as f64 / n_out as f64 - s as f64 * h;
            // backward RK4: dA/d(-t) = -A'
            let fixed = match ratio {
                Ratio::Optimal => None,
                Ratio::Given(f) => Some(f(t - h / 2.0)),
            };
            let k1 = -rhs(fixed, a);
            let k2 = -rhs(fixed, a + h / 2.0 * k1);
            let k3 = -rhs(fixed, a + h / 2.0 * k2);
            let k4 = -rhs(fixed, a + h * k3);
            a += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::NoConvergence(format!("value coefficient left (0, inf) at t={t}: {a}")));
            }
        }
        out[j] = a;
    }
    Ok(out)
}

/// Exact solution of the constant-coefficient problem.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x: f64,
    pub u_exact: f64,
    pub pi_star: DVector<f64>,
    /// Consumption-wealth ratio on the grid nodes; the terminal entry is 1
    /// (everything left is consumed at `T`).
    pub k_path: Vec<f64>,
    /// Value coefficient `A` on the grid nodes.
    pub a_path: Vec<f64>,
    /// Marginal value `u'(x) = A(0) x^{-gamma}`, the conjugate point.
    pub y_star: f64,
    /// Golden-section evaluations `(scale along Sigma^{-1} mu, A(0))`.
    pub trace: Vec<(f64, f64)>,
}

/// Value of the constant-coefficient market by restricting to constant
/// weights along `Sigma^{-1} mu` and a deterministic ratio, optimized by
/// golden section on the scale and pointwise in the ratio.
pub fn constant_model_value(prefs: &EzPreferences, model: &MarketModel, x: f64, grid: &TimeGrid) -> Result<OracleSolution> {
    prefs.require_main_regime()?;
    if !(x > 0.0) {
        return Err(Error::param("x", format!("must be positive, got {x}")));
    }
    let cm = ConstantMarket::of(model)?;
    let m = grid.n_steps();
    let dir = cm
        .cov
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::param("sigma", "covariance not invertible"))?
        * &cm.mu;
    let a0_at = |s: f64| -> Result<f64> {
        let g = cm.growth(prefs.gamma(), &(&dir * s));
        Ok(value_coefficient(prefs, g, &Ratio::Optimal, grid.horizon(), m, ODE_STEPS)?[0])
    };
    let (scale, trace) = if dir.norm() == 0.0 {
        (0.0, vec![])
    } else {
        let (lo, hi) = (0.0, 2.0);
        let (s, _, trace) = golden_min(a0_at, lo, hi, 60)?;
        if (s - lo).abs() < 1e-6 || (hi - s).abs() < 1e-6 {
            return Err(Error::NoConvergence(format!(
                "portfolio scale hit the bracket [{lo}, {hi}]; trace {trace:?}"
            )));
        }
        (s, trace)
    };
    let pi_star = &dir * scale;
    let a_path = value_coefficient(
        prefs,
        cm.growth(prefs.gamma(), &pi_star),
        &Ratio::Optimal,
        grid.horizon(),
        m,
        ODE_STEPS,
    )?;
    let mut k_path: Vec<f64> = a_path
        .iter()
        .map(|a| prefs.delta().powf(prefs.psi()) * a.powf(-prefs.psi() / prefs.theta()))
        .collect();
    k_path[m] = 1.0;
    let g1 = 1.0 - prefs.gamma();
    Ok(OracleSolution {
        x,
        u_exact: a_path[0] * x.powf(g1) / g1,
        y_star: a_path[0] * x.powf(-prefs.gamma()),
        pi_star,
        k_path,
        a_path,
        trace,
    })
}

/// Exact utility of the policy (constant weights `pi`, ratio `k(t)`) in a
/// constant-coefficient market, integrated with `steps` RK4 steps.
pub fn policy_value(
    prefs: &EzPreferences,
    model: &MarketModel,
    x: f64,
    pi: &DVector<f64>,
    ratio: &dyn Fn(f64) -> f64,
    horizon: f64,
    steps: usize,
) -> Result<f64> {
    let cm = ConstantMarket::of(model)?;
    let a = value_coefficient(prefs, cm.growth(prefs.gamma(), pi), &Ratio::Given(ratio), horizon, 1, steps)?;
    let g1 = 1.0 - prefs.gamma();
    Ok(a[0] * x.powf(g1) / g1)
}

/// Clamp levels for the candidate stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamps {
    pub delta_prime: f64,
    pub big_m: f64,
}

impl Clamps {
    /// `delta' = 1e-3 x`, `M = 1e3 x / (T + 1)`.
    pub fn default_for(x: f64, horizon: f64) -> Self {
        Self {
            delta_prime: 1e-3 * x,
            big_m: 1e3 * x / (horizon + 1.0),
        }
    }

    pub fn lower(&self, x: f64) -> f64 {
        x * self.delta_prime / (x + self.delta_prime)
    }
}

/// Node-wise `(x delta'/(x + delta')) v (c_hat / N) ^ M`.
pub fn candidate_consumption(base: &ConsumptionStream, n_eps: &Array2<f64>, x: f64, clamps: Clamps) -> Result<ConsumptionStream> {
    if base.values().dim() != n_eps.dim() {
        return Err(Error::Shape {
            what: "candidate inputs",
            expected: format!("{:?}", base.values().dim()),
            got: format!("{:?}", n_eps.dim()),
        });
    }
    if let Some(((p, i), v)) = n_eps.indexed_iter().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::domain("N^eps", format!("nonpositive value {v} on path {p}, node {i}")));
    }
    let lo = clamps.lower(x);
    if !(lo <= clamps.big_m) {
        return Err(Error::param(
            "clamps",
            format!("lower clamp {lo} exceeds M = {}", clamps.big_m),
        ));
    }
    let v = ndarray::Zip::from(base.values())
        .and(n_eps)
        .map_collect(|c, n| (c / n).max(lo).min(clamps.big_m));
    ConsumptionStream::new(v, format!("candidate c^eps from {}", base.description()))
}

/// Regression state for utility equations: `X^{1-gamma}` (pre-bequest wealth)
/// plus optional extra columns.
pub fn utility_state(
    prefs: &EzPreferences,
    wealth: &WealthPath,
    c: &ConsumptionStream,
    extra: &[&Array2<f64>],
) -> Result<StateProcess> {
    let mut w = wealth.values().clone();
    let m = w.ncols() - 1;
    for p in 0..w.nrows() {
        w[[p, m]] += c.values()[[p, m]];
    }
    let pw = w.mapv(|v| v.max(1e-300).powf(1.0 - prefs.gamma()));
    let mut cols = vec![&pw];
    cols.extend_from_slice(extra);
    StateProcess::from_columns(&cols)
}

/// Regression state for dual equations: `D^{(gamma-1)/gamma}` plus extra columns.
pub fn dual_state(prefs: &EzPreferences, d: &Array2<f64>, extra: &[&Array2<f64>]) -> Result<StateProcess> {
    let pw = d.mapv(|v| v.powf((prefs.gamma() - 1.0) / prefs.gamma()));
    let mut cols = vec![&pw];
    cols.extend_from_slice(extra);
    StateProcess::from_columns(&cols)
}

fn factor_columns(model: &MarketModel, bundle: &PathBundle) -> Vec<Array2<f64>> {
    if model.as_constant().is_some() {
        return vec![];
    }
    let fp = model.factor_paths(bundle);
    (0..fp.n_factors())
        .map(|j| fp.0.index_axis(ndarray::Axis(2), j).to_owned())
        .collect()
}

/// The unperturbed optimizer simulated on a bundle.
#[derive(Debug, Clone)]
pub struct BaseSolution {
    pub oracle: OracleSolution,
    pub wealth: WealthPath,
    pub c_hat: ConsumptionStream,
    pub utility: UtilityEvaluation,
    /// Utility-gradient density normalized to 1 at `t = 0`; `D_hat(y) = y` times this.
    pub d_hat_unit: Array2<f64>,
}

pub fn base_solution(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    x: f64,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<BaseSolution> {
    prefs.require_main_regime()?;
    let base = family.base();
    let grid = bundle.grid();
    let oracle = constant_model_value(prefs, base, x, grid)?;
    let rule = Arc::new(ConstantWeights(oracle.pi_star.clone()));
    let (wealth, c_hat) = simulate_wealth(base, rule, ConsumptionPolicy::Ratio(&oracle.k_path), x, bundle)?;
    if !wealth.admissible() {
        return Err(Error::Inadmissible {
            fraction: wealth.negative_fraction(),
        });
    }
    let state = utility_state(prefs, &wealth, &c_hat, &[])?;
    let utility = evaluate_utility(prefs, &c_hat, bundle, &state, None, opts)?;
    let d_hat_unit = utility_gradient_density(prefs, &c_hat, &utility.u_path, 1.0, grid)?;
    Ok(BaseSolution {
        oracle,
        wealth,
        c_hat,
        utility,
        d_hat_unit,
    })
}

/// Primal candidate in the `eps` market.
#[derive(Debug, Clone)]
pub struct PrimalBound {
    pub value: f64,
    pub se: f64,
    pub n_eps: Array2<f64>,
    pub consumption: ConsumptionStream,
    pub wealth: WealthPath,
    pub u_path: Array2<f64>,
}

pub fn primal_lower_bound(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    eps: f64,
    x: f64,
    clamps: Clamps,
    base: &BaseSolution,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<PrimalBound> {
    let n_eps = n_eps_path(family, eps, bundle)?;
    let cand = candidate_consumption(&base.c_hat, &n_eps, x, clamps)?;
    let model = family.model(eps)?;
    let rule = Arc::new(CandidatePortfolio::new(family, eps, base.oracle.pi_star.clone())?);
    let (wealth, realized) = simulate_wealth(
        &model,
        rule,
        ConsumptionPolicy::StreamConsumeRest {
            rates: &cand,
            cap: clamps.big_m,
        },
        x,
        bundle,
    )?;
    if !wealth.admissible() {
        return Err(Error::Inadmissible {
            fraction: wealth.negative_fraction(),
        });
    }
    let mut extra = factor_columns(&model, bundle);
    extra.push(n_eps.mapv(f64::ln));
    let refs: Vec<&Array2<f64>> = extra.iter().collect();
    let state = utility_state(prefs, &wealth, &realized, &refs)?;
    let ev = evaluate_utility(prefs, &realized, bundle, &state, None, opts)?;
    Ok(PrimalBound {
        value: ev.u0,
        se: ev.se,
        n_eps,
        consumption: realized,
        wealth,
        u_path: ev.u_path,
    })
}

/// Dual candidate `V_0(y D_hat N^eps) + x y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBound {
    pub y: f64,
    pub value: f64,
    pub v0: f64,
    pub se: f64,
}

fn dual_with_n(
    prefs: &EzPreferences,
    model: &MarketModel,
    x: f64,
    y: f64,
    base: &BaseSolution,
    n_eps: &Array2<f64>,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<DualBound> {
    if !(y > 0.0) {
        return Err(Error::param("y", format!("must be positive, got {y}")));
    }
    let d = &base.d_hat_unit * n_eps * y;
    let extra = factor_columns(model, bundle);
    let refs: Vec<&Array2<f64>> = extra.iter().collect();
    let state = dual_state(prefs, &d, &refs)?;
    let ev = evaluate_dual(prefs, &d, bundle, &state, None, opts)?;
    Ok(DualBound {
        y,
        value: ev.v0 + x * y,
        v0: ev.v0,
        se: ev.se,
    })
}

pub fn dual_upper_bound(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    eps: f64,
    x: f64,
    y: f64,
    base: &BaseSolution,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<DualBound> {
    let n_eps = n_eps_path(family, eps, bundle)?;
    dual_with_n(prefs, &family.model(eps)?, x, y, base, &n_eps, bundle, opts)
}

/// Result of minimizing the dual bound over `y`.
#[derive(Debug, Clone)]
pub struct ScanResult {
    pub y_star: f64,
    pub value: f64,
    pub se: f64,
    /// `min_y (v + x y) - u_exact` at `eps = 0`.
    pub gap: f64,
    pub points: Vec<(f64, f64)>,
    pub widened: bool,
}

/// `n` log-spaced points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default scan grid: 33 points over `[y_g/8, 8 y_g]`, `y_g = delta x^{-gamma}`.
pub fn default_y_grid(prefs: &EzPreferences, x: f64) -> Vec<f64> {
    let yg = prefs.delta() * x.powf(-prefs.gamma());
    log_grid(yg / 8.0, 8.0 * yg, 33)
}

/// Minimizes the unperturbed dual bound over `y_grid` (default grid when
/// `None`), widening once around a boundary minimum, then refines between
/// the neighbours of the grid minimum by golden section in `log y`.
pub fn conjugacy_scan(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    x: f64,
    y_grid: Option<&[f64]>,
    base: &BaseSolution,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<ScanResult> {
    let mut grid: Vec<f64> = match y_grid {
        Some(g) => g.to_vec(),
        None => default_y_grid(prefs, x),
    };
    if grid.len() < 3 || grid.windows(2).any(|w| !(w[0] > 0.0 && w[1] > w[0])) {
        return Err(Error::param("y_grid", "need at least 3 increasing positive points"));
    }
    let model = family.base();
    let ones = Array2::from_elem(base.d_hat_unit.dim(), 1.0);
    let eval = |y: f64| dual_with_n(prefs, model, x, y, base, &ones, bundle, opts);
    let scan = |g: &[f64]| -> Result<Vec<DualBound>> { g.par_iter().map(|&y| eval(y)).collect() };

    let mut widened = false;
    let mut points = scan(&grid)?;
    let argmin = |pts: &[DualBound]| {
        pts.iter()
            .enumerate()
            .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
            .map(|(i, _)| i)
            .unwrap()
    };
    let mut j = argmin(&points);
    if j == 0 || j == grid.len() - 1 {
        let mid = grid[grid.len() / 2];
        let shift = grid[j] / mid;
        grid = grid.iter().map(|y| y * shift).collect();
        points = scan(&grid)?;
        widened = true;
        j = argmin(&points);
        if j == 0 || j == grid.len() - 1 {
            return Err(Error::BoundaryMinimum {
                y: grid[j],
                lo: grid[0],
                hi: grid[grid.len() - 1],
            });
        }
    }
    let (lo, hi) = (grid[j - 1].ln(), grid[j + 1].ln());
    let (ly, _, _) = golden_min(|l| eval(l.exp()).map(|b| b.value), lo, hi, 20)?;
    let mut best = eval(ly.exp())?;
    if points[j].value < best.value {
        best = points[j];
    }
    let u_exact = base.oracle.u_exact;
    Ok(ScanResult {
        y_star: best.y,
        value: best.value,
        se: best.se,
        gap: best.value - u_exact,
        points: grid.iter().zip(&points).map(|(y, p)| (*y, p.value)).collect(),
        widened,
    })
}

/// Primal/dual bracket of `u(x, eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueBracket {
    pub x: f64,
    pub eps: f64,
    pub y_used: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
    pub clamps: Clamps,
    pub seed: u64,
    pub n_paths: usize,
}

impl ValueBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// `lower <= upper + 2 (SE_lower + SE_upper)`.
    pub fn weakly_dual(&self) -> bool {
        self.lower <= self.upper + 2.0 * (self.lower_se + self.upper_se)
    }

    /// Whether `u` lies in `[lower - 2 SE, upper + 2 SE]`.
    pub fn contains(&self, u: f64) -> bool {
        let s = 2.0 * (self.lower_se + self.upper_se);
        u >= self.lower - s && u <= self.upper + s
    }

    /// As [`contains`](Self::contains) with an extra absolute allowance, e.g. for time-discretisation bias.
    pub fn contains_within(&self, u: f64, allowance: f64) -> bool {
        let s = 2.0 * (self.lower_se + self.upper_se) + allowance.max(0.0);
        u >= self.lower - s && u <= self.upper + s
    }
}

pub const BRACKET_CSV_HEADER: [&str; 12] = [
    "x",
    "eps",
    "y",
    "lower",
    "lower_se",
    "upper",
    "upper_se",
    "width",
    "delta_prime",
    "big_m",
    "seed",
    "n_paths",
];

pub fn bracket_csv_record(b: &ValueBracket) -> Vec<String> {
    vec![
        b.x.to_string(),
        b.eps.to_string(),
        b.y_used.to_string(),
        b.lower.to_string(),
        b.lower_se.to_string(),
        b.upper.to_string(),
        b.upper_se.to_string(),
        b.width().to_string(),
        b.clamps.delta_prime.to_string(),
        b.clamps.big_m.to_string(),
        b.seed.to_string(),
        b.n_paths.to_string(),
    ]
}

pub fn write_brackets_csv<W: Write>(w: W, rows: &[ValueBracket]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(BRACKET_CSV_HEADER)?;
    for b in rows {
        wr.write_record(bracket_csv_record(b))?;
    }
    wr.flush()?;
    Ok(())
}

/// Primal and dual bound at one `eps` with a fixed `y`.
pub fn bracket(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    eps: f64,
    x: f64,
    y: f64,
    clamps: Clamps,
    base: &BaseSolution,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<(ValueBracket, PrimalBound)> {
    let lower = primal_lower_bound(prefs, family, eps, x, clamps, base, bundle, opts)?;
    let upper = dual_with_n(prefs, &family.model(eps)?, x, y, base, &lower.n_eps, bundle, opts)?;
    Ok((
        ValueBracket {
            x,
            eps,
            y_used: y,
            lower: lower.value,
            lower_se: lower.se,
            upper: upper.value,
            upper_se: upper.se,
            clamps,
            seed: bundle.seed(),
            n_paths: bundle.n_paths(),
        },
        lower,
    ))
}

/// Monte Carlo estimate of `E int D^{1-psi} dkappa` with a batch-stability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ReverseHolder {
    pub finite: bool,
    pub estimate: f64,
    pub batch_means: Vec<f64>,
    /// `(max - min) / mean` of the batch means.
    pub spread: f64,
}

pub fn reverse_holder_check(prefs: &EzPreferences, d: &Array2<f64>, grid: &TimeGrid) -> Result<ReverseHolder> {
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::domain("deflator", "reverse Hoelder check needs D > 0"));
    }
    let pw = d.mapv(|v| v.powf(1.0 - prefs.psi()));
    let per_path = clock_integral(&pw, grid)?;
    let n = per_path.len();
    let estimate = per_path.iter().sum::<f64>() / n as f64;
    let batches = 4.min(n);
    let size = n / batches;
    let batch_means: Vec<f64> = (0..batches)
        .map(|b| {
            let s = &per_path[b * size..if b + 1 == batches { n } else { (b + 1) * size }];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();
    let (mn, mx) = batch_means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let spread = if estimate > 0.0 { (mx - mn) / estimate } else { 0.0 };
    Ok(ReverseHolder {
        finite: spread.is_finite() && spread <= 0.5 && estimate.is_finite(),
        estimate,
        batch_means,
        spread,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::minimal_spd_path;
    use crate::paths::{make_bundle, mean_se, Sampling};
    use approx::assert_abs_diff_eq;

    fn prefs() -> EzPreferences {
        EzPreferences::new(2.0, 2.0, 0.1).unwrap()
    }

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 50).unwrap()
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, v, _) = golden_min(|x| Ok((x - 0.3).powi(2) + 1.0), 0.0, 1.0, 60).unwrap();
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_reference_values() {
        let p = prefs();
        let g = grid();
        let det = MarketModel::constant_1d(0.0, 0.0, 0.2).unwrap();
        let o = constant_model_value(&p, &det, 1.0, &g).unwrap();
        assert_abs_diff_eq!(o.u_exact, -1.2080297027537157, epsilon = 1e-9);
        assert_eq!(o.pi_star[0], 0.0);
        assert_abs_diff_eq!(o.y_star, 1.2080297027537157, epsilon = 1e-9);

        let st = MarketModel::constant_1d(0.02, 0.04, 0.2).unwrap();
        let o = constant_model_value(&p, &st, 1.0, &g).unwrap();
        assert_abs_diff_eq!(o.pi_star[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(o.u_exact, -1.1725240050599424, epsilon = 1e-9);

        let r_only = MarketModel::constant_1d(0.02, 0.0, 0.2).unwrap();
        let o = constant_model_value(&p, &r_only, 1.0, &g).unwrap();
        assert_abs_diff_eq!(o.u_exact, -1.1842421896803454, epsilon = 1e-9);
    }

    #[test]
    fn oracle_homogeneity() {
        let p = prefs();
        let m = MarketModel::constant_1d(0.02, 0.04, 0.2).unwrap();
        let a = constant_model_value(&p, &m, 1.0, &grid()).unwrap();
        let b = constant_model_value(&p, &m, 2.0, &grid()).unwrap();
        assert_abs_diff_eq!(b.u_exact, 2f64.powf(-1.0) * a.u_exact, epsilon = 1e-12);
        assert_abs_diff_eq!(b.y_star, 2f64.powf(-2.0) * a.y_star, epsilon = 1e-12);
    }

    #[test]
    fn oracle_beats_piecewise_constant_brute_force() {
        let p = prefs();
        let m = MarketModel::constant_1d(0.0, 0.0, 0.2).unwrap();
        let exact = constant_model_value(&p, &m, 1.0, &grid()).unwrap().u_exact;
        let zero = DVector::from_element(1, 0.0);
        let levels: Vec<f64> = (0..21).map(|i| 0.05 * i as f64 / 20.0).collect();
        let best = levels
            .par_iter()
            .map(|a| {
                let mut best = f64::NEG_INFINITY;
                for b in &levels {
                    for c in &levels {
                        for d in &levels {
                            let ks = [*a, *b, *c, *d];
                            let rule = |t: f64| ks[((t * 4.0) as usize).min(3)];
                            best = best.max(policy_value(&p, &m, 1.0, &zero, &rule, 1.0, 100).unwrap());
                        }
                    }
                }
                best
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        assert!(best <= exact + 1e-9, "{best} > {exact}");
        assert!(best >= exact - 1e-4, "{best} vs {exact}");
    }

    #[test]
    fn oracle_rejects_factor_model_and_bad_regime() {
        let fam = crate::market::PerturbationFamily::new(
            crate::market::FamilyKind::FactorVol {
                r: 0.02,
                mu: 0.04,
                sigma_bar: 0.2,
                rho: 0.0,
                factor: crate::market::OuFactor {
                    mean_reversion: 1.0,
                    long_run: 0.0,
                    vol: 0.3,
                    initial: 0.0,
                    driver: 0,
                },
                loading: 1.0,
                clip: 2.0,
            },
            1.0,
        )
        .unwrap();
        assert!(constant_model_value(&prefs(), &fam.model(0.5).unwrap(), 1.0, &grid()).is_err());
        let additive = EzPreferences::new(0.5, 2.0, 0.1).unwrap();
        assert!(constant_model_value(&additive, fam.base(), 1.0, &grid()).is_err());
    }

    #[test]
    fn candidate_clamps() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let c = ConsumptionStream::constant(0.3, 2, &g).unwrap();
        let ones = Array2::from_elem((2, 5), 1.0);
        let wide = Clamps {
            delta_prime: 1e-9,
            big_m: 1e9,
        };
        assert_eq!(candidate_consumption(&c, &ones, 1.0, wide).unwrap().values(), c.values());
        let zero = ConsumptionStream::constant(0.0, 2, &g).unwrap();
        let cl = Clamps {
            delta_prime: 0.5,
            big_m: 10.0,
        };
        let out = candidate_consumption(&zero, &ones, 1.0, cl).unwrap();
        assert!(out.values().iter().all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
        let bad = Array2::from_elem((2, 5), 0.0);
        assert!(candidate_consumption(&c, &bad, 1.0, cl).is_err());
    }

    #[test]
    fn candidate_clamp_ordering_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = TimeGrid::new(1.0, 6).unwrap();
        for _ in 0..100 {
            let x = rng.random_range(0.1..5.0);
            let cl = Clamps {
                delta_prime: rng.random_range(1e-4..1.0),
                big_m: rng.random_range(1.0..20.0),
            };
            let c = ConsumptionStream::new(Array2::from_shape_fn((3, 7), |_| rng.random_range(0.0..30.0)), "r").unwrap();
            let n = Array2::from_shape_fn((3, 7), |_| rng.random_range(0.05..3.0));
            let out = candidate_consumption(&c, &n, x, cl).unwrap();
            let lo = cl.lower(x);
            assert!(out.values().iter().all(|v| *v >= lo && *v <= cl.big_m));
            let _ = &g;
        }
    }

    #[test]
    fn reverse_holder_examples() {
        let p = prefs();
        let g = grid();
        let ones = Array2::from_elem((8, 51), 1.0);
        let rh = reverse_holder_check(&p, &ones, &g).unwrap();
        assert_abs_diff_eq!(rh.estimate, 2.0, epsilon = 1e-12);
        assert!(rh.finite);

        // E[D_t^{-1}] = e^{(r + lambda^2) t}
        let (r, mu, s) = (0.02, 0.04, 0.2);
        let n = 20_000;
        let b = make_bundle(9, n, &g, 1, Sampling::Plain).unwrap();
        let d = minimal_spd_path(&MarketModel::constant_1d(r, mu, s).unwrap(), &b).unwrap();
        let rh = reverse_holder_check(&p, &d, &g).unwrap();
        let l2 = (mu / s) * (mu / s);
        let k = r + l2;
        let exact = ((k * 1.0f64).exp() - 1.0) / k + (k * 1.0f64).exp();
        let per: Vec<f64> = clock_integral(&d.mapv(|v| 1.0 / v), &g).unwrap();
        let (_, se) = mean_se(&per);
        // trapezoid bias is O(dt^2), far below the MC error
        assert!((rh.estimate - exact).abs() <= 3.0 * se, "{} vs {exact}", rh.estimate);
        assert!(rh.finite);

        let heavy = minimal_spd_path(&MarketModel::constant_1d(0.0, 1.2, 0.2).unwrap(), &b).unwrap();
        let rh = reverse_holder_check(&p, &heavy, &g).unwrap();
        assert!(!rh.finite, "spread {}", rh.spread);
    }

    #[test]
    fn bracket_csv_layout() {
        let b = ValueBracket {
            x: 1.0,
            eps: 0.1,
            y_used: 1.2,
            lower: -1.2,
            lower_se: 0.001,
            upper: -1.19,
            upper_se: 0.002,
            clamps: Clamps::default_for(1.0, 1.0),
            seed: 7,
            n_paths: 100,
        };
        assert!(b.weakly_dual());
        assert!(b.contains(-1.195));
        assert!(!b.contains(-1.17));
        assert!(b.contains_within(-1.17, 0.02));
        let mut buf = Vec::new();
        write_brackets_csv(&mut buf, &[b]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), BRACKET_CSV_HEADER.join(","));
        assert!(lines.next().unwrap().starts_with("1,0.1,1.2,-1.2,"));
    }

    #[test]
    fn deterministic_bracket_is_tight() {
        let p = prefs();
        let g = TimeGrid::new(1.0, 50).unwrap();
        let b = make_bundle(1, 4, &g, 1, Sampling::Antithetic).unwrap();
        let fam = PerturbationFamily::rate_shift(0.0, 0.0, 0.2, 0.5, 1.0).unwrap();
        let opts = SolverOptions::default();
        let base = base_solution(&p, &fam, 1.0, &b, &opts).unwrap();
        let u = base.oracle.u_exact;
        assert!((base.utility.u0 - u).abs() < 0.01 * u.abs(), "{} vs {u}", base.utility.u0);
        let scan = conjugacy_scan(&p, &fam, 1.0, None, &base, &b, &opts).unwrap();
        assert!(scan.widened);
        assert!(scan.gap.abs() <= 0.02 * u.abs(), "gap {}", scan.gap);
        let (br, _) = bracket(
            &p,
            &fam,
            0.0,
            1.0,
            scan.y_star,
            Clamps::default_for(1.0, 1.0),
            &base,
            &b,
            &opts,
        )
        .unwrap();
        assert!(br.weakly_dual());
        assert!(br.lower >= u - 0.05 * u.abs());
        assert!(br.upper <= u + 0.05 * u.abs());
    }
}
