//! Epsilon sweeps: brackets and distances between the candidate in the
//! perturbed market and the unperturbed optimizer.
//!
//! The candidate `c_hat(x, 0) / N^eps` is not the perturbed optimizer; the
//! sweep tracks its convergence and certifies near-optimality through the
//! width of the primal/dual bracket.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bounds::{base_solution, bracket, conjugacy_scan, BaseSolution, Clamps, ValueBracket};
use crate::bsde::SolverOptions;
use crate::error::{Error, Result};
use crate::market::{n_eps_path, PerturbationFamily};
use crate::paths::{make_bundle, mean_se_paired, ConsumptionStream, PathBundle, Sampling, TimeGrid};
use crate::preferences::EzPreferences;
use crate::svg::{line_chart, Axes};

fn check_same(what: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape {
            what,
            expected: format!("{:?}", a.dim()),
            got: format!("{:?}", b.dim()),
        });
    }
    Ok(())
}

/// `E[(1/kappa_T) int |a - b| ^ 1 dkappa]`.
pub fn dist_kp(a: &Array2<f64>, b: &Array2<f64>, grid: &TimeGrid) -> Result<f64> {
    check_same("dist_kp", a, b)?;
    if a.ncols() != grid.n_nodes() {
        return Err(Error::Shape {
            what: "dist_kp",
            expected: format!("{} nodes", grid.n_nodes()),
            got: format!("{} nodes", a.ncols()),
        });
    }
    let w = grid.kappa_weights();
    let mass = grid.kappa_mass();
    let np = a.nrows();
    let total: f64 = (0..np)
        .map(|p| {
            (0..a.ncols())
                .map(|i| w[i] * (a[[p, i]] - b[[p, i]]).abs().min(1.0))
                .sum::<f64>()
        })
        .sum();
    Ok(total / (np as f64 * mass))
}

/// `E[max_nodes |a - b| ^ 1]`.
pub fn dist_ucp(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    check_same("dist_ucp", a, b)?;
    let np = a.nrows();
    let total: f64 = (0..np)
        .map(|p| {
            (0..a.ncols())
                .map(|i| (a[[p, i]] - b[[p, i]]).abs().min(1.0))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(total / np as f64)
}

/// Relative bias allowed per unit time step when a discretised quantity is
/// compared with a continuous-time identity.
pub const DISCRETISATION_ALLOWANCE: f64 = 0.002;

/// Per-node multiplier giving a family-wise 2-sigma band over `n` nodes
/// (Sidak), two-sided or one-sided.
pub fn familywise_multiplier(n: usize, two_sided: bool) -> f64 {
    let z = Normal::standard();
    let tail = 1.0 - z.cdf(2.0);
    let alpha = if two_sided { 2.0 * tail } else { tail };
    let per_node = 1.0 - (1.0 - alpha).powf(1.0 / n.max(1) as f64);
    let q = if two_sided { 1.0 - per_node / 2.0 } else { 1.0 - per_node };
    z.inverse_cdf(q)
}

/// Drift of `D_t X_t + int_0^t D c dkappa` relative to `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflationCheck {
    pub drift: Vec<f64>,
    pub se: Vec<f64>,
    /// Mean level at `t = 0`.
    pub level0: f64,
    /// Absolute allowance added to every band.
    pub allowance: f64,
    /// SE multipliers of the two-sided and one-sided bands.
    pub z_martingale: f64,
    pub z_supermartingale: f64,
    /// `|drift| <= z_martingale SE + allowance` at every node.
    pub is_martingale: bool,
    /// `drift <= z_supermartingale SE + allowance` at every node.
    pub is_supermartingale: bool,
}

impl DeflationCheck {
    pub fn max_abs_drift(&self) -> f64 {
        self.drift.iter().fold(0.0, |a, d| a.max(d.abs()))
    }
}

/// Deflated wealth plus deflated cumulative consumption, per node. Node `M`
/// of `wealth` is the wealth left after the bequest lump `c[M]`. The debit
/// `c_i dt` leaves the wealth at `t_{i+1}` and is deflated there, matching
/// [`simulate_wealth`](crate::paths::simulate_wealth). Bands are family-wise
/// 2-sigma over the nodes `1..=M`, with no allowance beyond round-off.
pub fn martingale_deflation_check(
    d: &Array2<f64>,
    wealth: &Array2<f64>,
    c: &ConsumptionStream,
    grid: &TimeGrid,
    sampling: Sampling,
) -> Result<DeflationCheck> {
    deflation_check_within(d, wealth, c, grid, sampling, 0.0)
}

/// As [`martingale_deflation_check`] with a time-discretisation allowance
/// `DISCRETISATION_ALLOWANCE * dt * |level0|`.
pub fn martingale_deflation_check_discretised(
    d: &Array2<f64>,
    wealth: &Array2<f64>,
    c: &ConsumptionStream,
    grid: &TimeGrid,
    sampling: Sampling,
) -> Result<DeflationCheck> {
    let strict = deflation_check_within(d, wealth, c, grid, sampling, 0.0)?;
    let allowance = DISCRETISATION_ALLOWANCE * grid.dt() * strict.level0.abs();
    deflation_check_within(d, wealth, c, grid, sampling, allowance)
}

fn deflation_check_within(
    d: &Array2<f64>,
    wealth: &Array2<f64>,
    c: &ConsumptionStream,
    grid: &TimeGrid,
    sampling: Sampling,
    allowance: f64,
) -> Result<DeflationCheck> {
    check_same("deflation check (wealth)", d, wealth)?;
    check_same("deflation check (consumption)", d, c.values())?;
    let (np, nn) = d.dim();
    if nn != grid.n_nodes() {
        return Err(Error::Shape {
            what: "deflation check",
            expected: format!("{} nodes", grid.n_nodes()),
            got: format!("{nn} nodes"),
        });
    }
    let m = nn - 1;
    let dt = grid.dt();
    let cv = c.values();
    let mut level = Array2::<f64>::zeros((np, nn));
    for p in 0..np {
        let mut acc = 0.0;
        for i in 0..nn {
            let atom = if i == m { d[[p, m]] * cv[[p, m]] } else { 0.0 };
            level[[p, i]] = d[[p, i]] * wealth[[p, i]] + acc + atom;
            if i < m {
                acc += d[[p, i + 1]] * cv[[p, i]] * dt;
            }
        }
    }
    let level0 = level.column(0).sum() / np as f64;
    let scale = 1.0 + level.column(0).iter().map(|v| v.abs()).sum::<f64>() / np as f64;
    let tol = 1e-12 * scale + allowance.max(0.0);
    let z_martingale = familywise_multiplier(m, true);
    let z_supermartingale = familywise_multiplier(m, false);
    let mut drift = Vec::with_capacity(nn);
    let mut se = Vec::with_capacity(nn);
    let mut is_martingale = true;
    let mut is_supermartingale = true;
    for i in 0..nn {
        let diff: Vec<f64> = (0..np).map(|p| level[[p, i]] - level[[p, 0]]).collect();
        let (mu, s) = mean_se_paired(&diff, sampling);
        if mu.abs() > z_martingale * s + tol {
            is_martingale = false;
        }
        if mu > z_supermartingale * s + tol {
            is_supermartingale = false;
        }
        drift.push(mu);
        se.push(s);
    }
    Ok(DeflationCheck {
        drift,
        se,
        level0,
        allowance: allowance.max(0.0),
        z_martingale,
        z_supermartingale,
        is_martingale,
        is_supermartingale,
    })
}

/// Numerical setup shared by every row of a sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Defaults to [`Clamps::default_for`].
    pub clamps: Option<Clamps>,
    /// Fixed `y`; when `None` the minimizer of the unperturbed scan is used.
    pub y: Option<f64>,
    pub y_grid: Option<Vec<f64>>,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub bracket: ValueBracket,
    /// Candidate (realized) consumption against `c_hat(x, 0)`.
    pub dist_consumption_kp: f64,
    pub dist_utility_ucp: f64,
    pub dist_wealth_kp: f64,
    pub dist_wealth_ucp: f64,
    /// `N^eps` against 1.
    pub dist_n_kp: f64,
    /// Largest absolute drift of the deflated candidate wealth.
    pub deflation_drift: f64,
    pub deflation_supermartingale: bool,
    /// Node-wise extremes of the candidate rates (proxy for local essential bounds).
    pub c_min: f64,
    pub c_max: f64,
}

impl StabilityRow {
    pub fn eps(&self) -> f64 {
        self.bracket.eps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub x: f64,
    pub u_exact: f64,
    pub y_star: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    /// `(eps, dist_kp(N^eps, 1))` from the pre-sweep vanishing check.
    pub vanishing: Vec<(f64, f64)>,
    /// Rows in the order of the eps list; the last row is `eps = 0`.
    pub rows: Vec<StabilityRow>,
}

pub const REPORT_CSV_HEADER: [&str; 17] = [
    "eps",
    "lower",
    "lower_se",
    "upper",
    "upper_se",
    "width",
    "y",
    "dist_c_kp",
    "dist_u_ucp",
    "dist_x_kp",
    "dist_x_ucp",
    "dist_n_kp",
    "deflation_drift",
    "deflation_supermartingale",
    "c_min",
    "c_max",
    "seed",
];

/// The metrics whose trend along the eps list is asserted.
pub const TREND_METRICS: [&str; 4] = ["width", "dist_c_kp", "dist_u_ucp", "dist_x_ucp"];

impl StabilityReport {
    pub fn header(&self) -> String {
        format!(
            "stability sweep: x={}, y*={:.6}, u_exact={:.6}, seed={}, paths={}, steps={}\n\
             The tracked candidate is c_hat(x,0)/N^eps, not the optimizer of the perturbed \
             problem; near-optimality is certified only through the bracket width.",
            self.x, self.y_star, self.u_exact, self.seed, self.n_paths, self.n_steps
        )
    }

    /// Rows with `eps > 0`, in list order.
    pub fn perturbed_rows(&self) -> impl Iterator<Item = &StabilityRow> {
        self.rows.iter().filter(|r| r.eps() != 0.0)
    }

    pub fn reference_row(&self) -> Option<&StabilityRow> {
        self.rows.iter().find(|r| r.eps() == 0.0)
    }

    pub fn metric(row: &StabilityRow, name: &str) -> Option<f64> {
        Some(match name {
            "width" => row.bracket.width(),
            "dist_c_kp" => row.dist_consumption_kp,
            "dist_u_ucp" => row.dist_utility_ucp,
            "dist_x_kp" => row.dist_wealth_kp,
            "dist_x_ucp" => row.dist_wealth_ucp,
            "dist_n_kp" => row.dist_n_kp,
            _ => return None,
        })
    }

    /// Violations of `v_{k+1} <= (1 + slack) v_k` along the perturbed rows.
    pub fn trend_violations(&self, slack: f64) -> Vec<String> {
        let rows: Vec<&StabilityRow> = self.perturbed_rows().collect();
        let mut out = Vec::new();
        for name in TREND_METRICS {
            for w in rows.windows(2) {
                let a = Self::metric(w[0], name).unwrap();
                let b = Self::metric(w[1], name).unwrap();
                if b > (1.0 + slack) * a.max(0.0) {
                    out.push(format!(
                        "{name}: {b:.3e} at eps={} after {a:.3e} at eps={}",
                        w[1].eps(),
                        w[0].eps()
                    ));
                }
            }
        }
        out
    }

    /// Trend metrics on the smallest positive eps.
    pub fn final_values(&self) -> Vec<(&'static str, f64)> {
        match self.perturbed_rows().last() {
            Some(r) => TREND_METRICS.iter().map(|n| (*n, Self::metric(r, n).unwrap())).collect(),
            None => vec![],
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(REPORT_CSV_HEADER)?;
        for r in &self.rows {
            let b = &r.bracket;
            wr.write_record([
                b.eps.to_string(),
                b.lower.to_string(),
                b.lower_se.to_string(),
                b.upper.to_string(),
                b.upper_se.to_string(),
                b.width().to_string(),
                b.y_used.to_string(),
                r.dist_consumption_kp.to_string(),
                r.dist_utility_ucp.to_string(),
                r.dist_wealth_kp.to_string(),
                r.dist_wealth_ucp.to_string(),
                r.dist_n_kp.to_string(),
                r.deflation_drift.to_string(),
                r.deflation_supermartingale.to_string(),
                r.c_min.to_string(),
                r.c_max.to_string(),
                b.seed.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Log-log line chart of the trend metrics against eps (positive values only).
    pub fn write_svg<W: Write>(&self, w: W) -> Result<()> {
        let rows: Vec<&StabilityRow> = self.perturbed_rows().collect();
        let series: Vec<(&str, Vec<(f64, f64)>)> = TREND_METRICS
            .iter()
            .map(|name| {
                (
                    *name,
                    rows.iter().map(|r| (r.eps(), Self::metric(r, name).unwrap())).collect(),
                )
            })
            .collect();
        line_chart(
            w,
            "bracket width and distances vs eps (log-log)",
            "eps",
            &series,
            Axes {
                log_x: true,
                log_y: true,
            },
        )
    }
}

/// `dist_kp(N^eps, 1)` for each eps; fails unless it decays along the list.
pub fn check_vanishing(family: &PerturbationFamily, eps: &[f64], bundle: &PathBundle) -> Result<Vec<(f64, f64)>> {
    let ones = Array2::from_elem((bundle.n_paths(), bundle.grid().n_nodes()), 1.0);
    let mut out = Vec::with_capacity(eps.len());
    for &e in eps {
        let n = n_eps_path(family, e, bundle).map_err(|err| err.at_eps(e))?;
        out.push((e, dist_kp(&n, &ones, bundle.grid())?));
    }
    let d: Vec<f64> = out.iter().map(|p| p.1).collect();
    if d.iter().all(|v| *v <= 1e-12) {
        return Ok(out);
    }
    let monotone = d.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let decays = d.len() >= 2 && d[d.len() - 1] <= 0.5 * d[0];
    if !(monotone && decays) {
        let table: Vec<String> = out.iter().map(|(e, v)| format!("eps={e}: {v:.3e}")).collect();
        return Err(Error::FamilyNotVanishing(format!(
            "dist_kp(N^eps, 1) does not decay along eps halvings [{}]",
            table.join(", ")
        )));
    }
    Ok(out)
}

fn validate_eps(family: &PerturbationFamily, eps_list: &[f64]) -> Result<Vec<f64>> {
    let mut eps: Vec<f64> = eps_list.to_vec();
    if eps.last() != Some(&0.0) {
        eps.push(0.0);
    }
    if eps.iter().any(|e| !(e.is_finite() && *e >= 0.0 && *e < family.eps0())) {
        return Err(Error::param("eps_list", format!("values must lie in [0, {})", family.eps0())));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param("eps_list", "must be strictly decreasing"));
    }
    if eps.len() < 2 {
        return Err(Error::param("eps_list", "need at least one positive eps"));
    }
    Ok(eps)
}

/// Runs the sweep on one bundle shared by every row. A zero row is appended
/// when missing.
pub fn stability_sweep(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    x: f64,
    eps_list: &[f64],
    cfg: &SweepConfig,
) -> Result<StabilityReport> {
    let eps = validate_eps(family, eps_list)?;
    let bundle = make_bundle(cfg.seed, cfg.n_paths, &cfg.grid, family.base().brownian_dim(), cfg.sampling)?;

    let positive: Vec<f64> = eps.iter().copied().filter(|e| *e > 0.0).collect();
    let smallest = *positive.last().unwrap();
    let mut probe = positive.clone();
    probe.extend([smallest / 2.0, smallest / 4.0]);
    let vanishing = check_vanishing(family, &probe, &bundle)?;

    let base = base_solution(prefs, family, x, &bundle, &cfg.solver)?;
    let y = match cfg.y {
        Some(y) => y,
        None => conjugacy_scan(prefs, family, x, cfg.y_grid.as_deref(), &base, &bundle, &cfg.solver)?.y_star,
    };
    let clamps = cfg.clamps.unwrap_or_else(|| Clamps::default_for(x, cfg.grid.horizon()));

    let rows: Vec<Result<StabilityRow>> = eps
        .par_iter()
        .map(|&e| sweep_row(prefs, family, e, x, y, clamps, &base, &bundle, &cfg.solver).map_err(|err| err.at_eps(e)))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;

    Ok(StabilityReport {
        x,
        u_exact: base.oracle.u_exact,
        y_star: y,
        seed: cfg.seed,
        n_paths: cfg.n_paths,
        n_steps: cfg.grid.n_steps(),
        vanishing,
        rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    prefs: &EzPreferences,
    family: &PerturbationFamily,
    eps: f64,
    x: f64,
    y: f64,
    clamps: Clamps,
    base: &BaseSolution,
    bundle: &PathBundle,
    opts: &SolverOptions,
) -> Result<StabilityRow> {
    let grid = bundle.grid();
    let (br, primal) = bracket(prefs, family, eps, x, y, clamps, base, bundle, opts)?;
    let ones = Array2::from_elem(primal.n_eps.dim(), 1.0);
    let d = &base.d_hat_unit * &primal.n_eps * y;
    let defl = martingale_deflation_check(&d, primal.wealth.values(), &primal.consumption, grid, bundle.sampling())?;
    let rates = primal.consumption.values();
    let m = grid.n_steps();
    let (c_min, c_max) = rates
        .slice(ndarray::s![.., ..m])
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    Ok(StabilityRow {
        bracket: br,
        dist_consumption_kp: dist_kp(rates, base.c_hat.values(), grid)?,
        dist_utility_ucp: dist_ucp(&primal.u_path, &base.utility.u_path)?,
        dist_wealth_kp: dist_kp(primal.wealth.values(), base.wealth.values(), grid)?,
        dist_wealth_ucp: dist_ucp(primal.wealth.values(), base.wealth.values())?,
        dist_n_kp: dist_kp(&primal.n_eps, &ones, grid)?,
        deflation_drift: defl.max_abs_drift(),
        deflation_supermartingale: defl.is_supermartingale,
        c_min,
        c_max,
    })
}
