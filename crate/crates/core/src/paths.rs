//! Simulation engine: time grid with the consumption clock, seeded Brownian
//! bundles, consumption streams, wealth paths and clock integrals.
//!
//! The clock `kappa_t = t + 1_{T}(t)` is represented by per-node weights:
//! trapezoidal `dt` weights plus a unit atom on the terminal node, so a
//! process sampled on the grid integrates against `dkappa` as
//! `sum_i w_i v_i` with total mass `T + 1`.
//!
//! Randomness is keyed by `(seed, path)`: every path (or antithetic pair)
//! owns a ChaCha stream and draws its steps sequentially, so generation
//! order across threads never changes the numbers.

use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::DVector;
use ndarray::{Array2, Array3, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::MarketModel;

/// Uniform grid `0 = t_0 < ... < t_M = T` with clock weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    nodes: Vec<f64>,
    kappa_weights: Vec<f64>,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::param("horizon", format!("must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(Error::param("n_steps", "must be at least 1"));
        }
        let dt = horizon / n_steps as f64;
        let nodes: Vec<f64> = (0..=n_steps)
            .map(|i| if i == n_steps { horizon } else { i as f64 * dt })
            .collect();
        let mut kappa_weights = vec![dt; n_steps + 1];
        kappa_weights[0] = 0.5 * dt;
        kappa_weights[n_steps] = 0.5 * dt + 1.0;
        Ok(Self {
            horizon,
            nodes,
            kappa_weights,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn kappa_weights(&self) -> &[f64] {
        &self.kappa_weights
    }

    /// Total clock mass, `T + 1`.
    pub fn kappa_mass(&self) -> f64 {
        self.kappa_weights.iter().sum()
    }
}

/// How the Gaussian draws are paired.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    Plain,
    /// Path `2j + 1` is the negation of path `2j`.
    Antithetic,
}

/// Brownian increments `dB = (dW, dW_perp)` of dimension `k + n`, already
/// scaled by `sqrt(dt)`, laid out as `[path, step, dim]`.
#[derive(Debug, Clone)]
pub struct PathBundle {
    seed: u64,
    sampling: Sampling,
    grid: TimeGrid,
    increments: Arc<Array3<f64>>,
}

/// Generates a reproducible bundle. Antithetic sampling needs an even path count.
pub fn make_bundle(seed: u64, n_paths: usize, grid: &TimeGrid, dim: usize, sampling: Sampling) -> Result<PathBundle> {
    if n_paths == 0 {
        return Err(Error::param("n_paths", "must be at least 1"));
    }
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    if sampling == Sampling::Antithetic && !n_paths.is_multiple_of(2) {
        return Err(Error::param(
            "n_paths",
            format!("antithetic sampling needs an even count, got {n_paths}"),
        ));
    }
    let n_steps = grid.n_steps();
    let sqdt = grid.dt().sqrt();
    let block = n_steps * dim;
    let mut data = vec![0.0; n_paths * block];
    let group = match sampling {
        Sampling::Plain => 1,
        Sampling::Antithetic => 2,
    };
    data.par_chunks_mut(block * group).enumerate().for_each(|(g, chunk)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(g as u64);
        let (first, rest) = chunk.split_at_mut(block);
        for v in first.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = z * sqdt;
        }
        if !rest.is_empty() {
            for (a, b) in rest.iter_mut().zip(first.iter()) {
                *a = -*b;
            }
        }
    });
    let increments = Array3::from_shape_vec((n_paths, n_steps, dim), data).expect("shape matches the allocation");
    Ok(PathBundle {
        seed,
        sampling,
        grid: grid.clone(),
        increments: Arc::new(increments),
    })
}

const BUNDLE_MAGIC: &[u8; 4] = b"EZPB";
const BUNDLE_VERSION: u32 = 1;

impl PathBundle {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.increments.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.increments.shape()[2]
    }

    pub fn increments(&self) -> &Array3<f64> {
        &self.increments
    }

    /// `dB[path, step, j]`.
    #[inline]
    pub fn db(&self, path: usize, step: usize, j: usize) -> f64 {
        self.increments[[path, step, j]]
    }

    /// Writes the bundle as: magic `EZPB`, `u32` version, `u64` seed,
    /// `u8` sampling (0 plain, 1 antithetic), `u64` n_paths, `u64` n_steps,
    /// `u64` dim, `f64` horizon, then the increments row-major
    /// `[path][step][dim]`. All values little-endian.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BUNDLE_MAGIC)?;
        w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[match self.sampling {
            Sampling::Plain => 0u8,
            Sampling::Antithetic => 1u8,
        }])?;
        for v in [self.n_paths(), self.grid.n_steps(), self.dim()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.grid.horizon.to_le_bytes())?;
        for x in self.increments.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Io("not a path bundle file".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != BUNDLE_VERSION {
            return Err(Error::Io(format!("unsupported bundle version {version}")));
        }
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b1)?;
        let sampling = match b1[0] {
            0 => Sampling::Plain,
            1 => Sampling::Antithetic,
            s => return Err(Error::Io(format!("bad sampling tag {s}"))),
        };
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut b8)?;
            *d = u64::from_le_bytes(b8) as usize;
        }
        r.read_exact(&mut b8)?;
        let horizon = f64::from_le_bytes(b8);
        let grid = TimeGrid::new(horizon, dims[1])?;
        let total = dims[0] * dims[1] * dims[2];
        let mut data = Vec::with_capacity(total);
        for _ in 0..total {
            r.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        let increments = Array3::from_shape_vec((dims[0], dims[1], dims[2]), data).map_err(|e| Error::Io(e.to_string()))?;
        Ok(Self {
            seed,
            sampling,
            grid,
            increments: Arc::new(increments),
        })
    }
}

/// Nonnegative consumption on the grid: rates on nodes `0..M`, the bequest
/// lump `c_T` on node `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumptionStream {
    values: Array2<f64>,
    description: String,
}

impl ConsumptionStream {
    pub fn new(values: Array2<f64>, description: impl Into<String>) -> Result<Self> {
        for ((p, i), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: "consumption",
                    path: p,
                    node: i,
                });
            }
            if *v < 0.0 {
                return Err(Error::domain(
                    "consumption",
                    format!("negative value {v} on path {p}, node {i}"),
                ));
            }
        }
        Ok(Self {
            values,
            description: description.into(),
        })
    }

    /// The same constant on every node, including the bequest lump.
    pub fn constant(value: f64, n_paths: usize, grid: &TimeGrid) -> Result<Self> {
        Self::new(
            Array2::from_elem((n_paths, grid.n_nodes()), value),
            format!("constant {value}"),
        )
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn n_paths(&self) -> usize {
        self.values.nrows()
    }

    pub fn terminal(&self) -> ndarray::ArrayView1<'_, f64> {
        self.values.column(self.values.ncols() - 1)
    }

    /// `a * c`, used by homotheticity checks.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        Self::new(&self.values * a, format!("{} x {a}", self.description))
    }

    /// Node-wise `lambda c' + (1 - lambda) c''`.
    pub fn mix(&self, other: &Self, lambda: f64) -> Result<Self> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::Shape {
                what: "consumption mix",
                expected: format!("{:?}", self.values.dim()),
                got: format!("{:?}", other.values.dim()),
            });
        }
        Self::new(
            &self.values * lambda + &other.values * (1.0 - lambda),
            format!("mix({lambda})"),
        )
    }
}

/// Risky-asset weights as a function of `(t, factor state)`; the riskless
/// weight is the residual `1 - sum(pi)`.
pub trait PortfolioRule: Send + Sync + std::fmt::Debug {
    fn weights(&self, t: f64, factors: &[f64]) -> Result<DVector<f64>>;
}

/// Constant risky weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantWeights(pub DVector<f64>);

impl PortfolioRule for ConstantWeights {
    fn weights(&self, _t: f64, _factors: &[f64]) -> Result<DVector<f64>> {
        Ok(self.0.clone())
    }
}

/// How consumption is generated while the wealth is simulated.
#[derive(Debug, Clone, Copy)]
pub enum ConsumptionPolicy<'a> {
    /// Prescribed rates and prescribed bequest lump.
    Stream(&'a ConsumptionStream),
    /// Prescribed rates; the bequest lump is the remaining wealth, capped.
    StreamConsumeRest { rates: &'a ConsumptionStream, cap: f64 },
    /// `c_t = k(t) X_t` on nodes `0..M`, everything left is consumed at `T`.
    Ratio(&'a [f64]),
}

/// Simulated wealth `[path, node]`; node `M` holds the wealth after the
/// bequest atom.
#[derive(Debug, Clone)]
pub struct WealthPath {
    values: Array2<f64>,
    x0: f64,
    admissible: bool,
    negative_fraction: f64,
    strategy: Arc<dyn PortfolioRule>,
}

impl WealthPath {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// True iff wealth is nonnegative on every node of every path.
    pub fn admissible(&self) -> bool {
        self.admissible
    }

    /// Fraction of paths that hit negative wealth somewhere.
    pub fn negative_fraction(&self) -> f64 {
        self.negative_fraction
    }

    pub fn strategy(&self) -> &Arc<dyn PortfolioRule> {
        &self.strategy
    }
}

/// Simulates `dX = X (r + pi.mu) dt + X pi' sigma dW^rho - c dkappa`.
///
/// Over each step the multiplicative part is advanced in log form with
/// coefficients frozen at the left node (exact for constant coefficients,
/// and exactly `x0 e^{rt}` for the riskless position); the consumption
/// `c_i dt` is then subtracted. The terminal lump is removed on node `M`.
/// Returns the wealth and the consumption actually realized.
pub fn simulate_wealth(
    model: &MarketModel,
    strategy: Arc<dyn PortfolioRule>,
    consumption: ConsumptionPolicy<'_>,
    x0: f64,
    bundle: &PathBundle,
) -> Result<(WealthPath, ConsumptionStream)> {
    if !(x0 > 0.0 && x0.is_finite()) {
        return Err(Error::param("x0", format!("initial wealth must be positive, got {x0}")));
    }
    let grid = bundle.grid();
    let m = grid.n_steps();
    let n_paths = bundle.n_paths();
    let check_shape = |s: &ConsumptionStream| -> Result<()> {
        if s.values().dim() != (n_paths, m + 1) {
            return Err(Error::Shape {
                what: "consumption stream",
                expected: format!("({n_paths}, {})", m + 1),
                got: format!("{:?}", s.values().dim()),
            });
        }
        Ok(())
    };
    match consumption {
        ConsumptionPolicy::Stream(s) | ConsumptionPolicy::StreamConsumeRest { rates: s, .. } => check_shape(s)?,
        ConsumptionPolicy::Ratio(k) => {
            if k.len() != m + 1 {
                return Err(Error::Shape {
                    what: "consumption ratio",
                    expected: format!("{}", m + 1),
                    got: format!("{}", k.len()),
                });
            }
        }
    }
    let factors = model.factor_paths(bundle);
    let dw = model.w_rho_increments(bundle)?;
    let dt = grid.dt();

    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut x = vec![0.0; m + 1];
            let mut c = vec![0.0; m + 1];
            x[0] = x0;
            for i in 0..m {
                let t = grid.t(i);
                let fs = factors.row_state(p, i);
                let co = model.coefficients_at(t, &fs)?;
                let pi = strategy.weights(t, &fs)?;
                let vol_exposure = co.sigma.transpose() * &pi;
                let drift = co.r + pi.dot(&co.mu) - 0.5 * vol_exposure.norm_squared();
                let mut shock = 0.0;
                for j in 0..model.n() {
                    shock += vol_exposure[j] * dw[[p, i, j]];
                }
                let growth = (drift * dt + shock).exp();
                c[i] = match consumption {
                    ConsumptionPolicy::Stream(s) | ConsumptionPolicy::StreamConsumeRest { rates: s, .. } => s.values()[[p, i]],
                    ConsumptionPolicy::Ratio(k) => k[i] * x[i].max(0.0),
                };
                x[i + 1] = x[i] * growth - c[i] * dt;
                if !x[i + 1].is_finite() {
                    return Err(Error::NonFinite {
                        what: "wealth",
                        path: p,
                        node: i + 1,
                    });
                }
            }
            c[m] = match consumption {
                ConsumptionPolicy::Stream(s) => s.values()[[p, m]],
                ConsumptionPolicy::StreamConsumeRest { cap, .. } => x[m].max(0.0).min(cap),
                ConsumptionPolicy::Ratio(_) => x[m].max(0.0),
            };
            x[m] -= c[m];
            Ok((x, c))
        })
        .collect();

    let mut xs = Array2::zeros((n_paths, m + 1));
    let mut cs = Array2::zeros((n_paths, m + 1));
    let mut negative = 0usize;
    for (p, row) in rows.into_iter().enumerate() {
        let (x, c) = row?;
        // round-off in "consume the rest" leaves |x| ~ 1e-16
        if x.iter().any(|v| *v < -1e-12 * x0) {
            negative += 1;
        }
        xs.row_mut(p).assign(&ndarray::Array1::from(x));
        cs.row_mut(p).assign(&ndarray::Array1::from(c));
    }
    let desc = match consumption {
        ConsumptionPolicy::Stream(s) => s.description().to_string(),
        ConsumptionPolicy::StreamConsumeRest { rates, .. } => format!("{} (bequest = remaining wealth)", rates.description()),
        ConsumptionPolicy::Ratio(_) => "policy k(t) X".to_string(),
    };
    let negative_fraction = negative as f64 / n_paths as f64;
    Ok((
        WealthPath {
            values: xs,
            x0,
            admissible: negative == 0,
            negative_fraction,
            strategy,
        },
        ConsumptionStream::new(cs.mapv(|v: f64| v.max(0.0)), desc)?,
    ))
}

/// `int_0^T v dkappa` per path: trapezoidal `dt` part plus the terminal atom.
pub fn clock_integral(values: &Array2<f64>, grid: &TimeGrid) -> Result<Vec<f64>> {
    if values.ncols() != grid.n_nodes() {
        return Err(Error::Shape {
            what: "clock integral",
            expected: format!("{} nodes", grid.n_nodes()),
            got: format!("{} nodes", values.ncols()),
        });
    }
    let w = grid.kappa_weights();
    Ok(values
        .axis_iter(Axis(0))
        .map(|row| row.iter().zip(w).map(|(v, wi)| v * wi).sum())
        .collect())
}

/// Only the `dt` part of [`clock_integral`].
pub fn time_integral(values: &Array2<f64>, grid: &TimeGrid) -> Result<Vec<f64>> {
    let full = clock_integral(values, grid)?;
    let last = grid.n_nodes() - 1;
    Ok(full.into_iter().zip(values.column(last)).map(|(s, v)| s - v).collect())
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Standard error that respects antithetic pairing: pairs are averaged first.
pub fn mean_se_paired(xs: &[f64], sampling: Sampling) -> (f64, f64) {
    match sampling {
        Sampling::Plain => mean_se(xs),
        Sampling::Antithetic => {
            let pairs: Vec<f64> = xs.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
            mean_se(&pairs)
        }
    }
}
