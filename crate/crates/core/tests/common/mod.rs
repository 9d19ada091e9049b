//! Shared fixtures and randomized property checks for the integration targets.
#![allow(dead_code)]

use std::sync::Arc;

use ezstab::bounds::base_solution;
use ezstab::bsde::{
    concavity_gap, default_truncation, evaluate_utility, truncation_ladder, utility_terminal, GeneratorKind, SolverOptions,
    Truncation,
};
use ezstab::market::{minimal_spd_path, n_eps_path, utility_gradient_density, MarketModel, PerturbationFamily};
use ezstab::paths::{
    make_bundle, simulate_wealth, ConstantWeights, ConsumptionPolicy, ConsumptionStream, PathBundle, Sampling, TimeGrid,
};
use ezstab::preferences::EzPreferences;
use ezstab::regression::StateProcess;
use ezstab::stability::{martingale_deflation_check, martingale_deflation_check_discretised, DISCRETISATION_ALLOWANCE};
use ndarray::Array2;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

pub const CASES: u32 = 100;

pub fn fixture_prefs() -> EzPreferences {
    EzPreferences::new(2.0, 2.0, 0.1).unwrap()
}

pub fn runner() -> TestRunner {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        config,
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

/// Main-regime preferences: gamma > 1, psi > 1.
pub fn prefs_strategy() -> impl Strategy<Value = (f64, f64, f64)> {
    (1.5f64..5.0, 1.2f64..4.0, 0.02f64..0.2)
}

fn small_bundle(seed: u64, n_paths: usize, n_steps: usize) -> PathBundle {
    let grid = TimeGrid::new(1.0, n_steps).unwrap();
    make_bundle(seed, n_paths, &grid, 1, Sampling::Antithetic).unwrap()
}

/// `a exp(b W_t)` on the bundle.
fn exp_stream(state: &StateProcess, a: f64, b: f64) -> ConsumptionStream {
    let (np, nn, _) = state.0.dim();
    ConsumptionStream::new(
        Array2::from_shape_fn((np, nn), |(p, i)| a * (b * state.0[[p, i, 0]]).exp()),
        "a exp(b W)",
    )
    .unwrap()
}

#[derive(Debug, Clone)]
pub struct ComparisonCase {
    pub prefs: (f64, f64, f64),
    pub level: f64,
    pub vol: f64,
    pub ratio: f64,
    pub shift: f64,
    pub seed: u64,
}

pub fn comparison_strategy() -> impl Strategy<Value = ComparisonCase> {
    (
        prefs_strategy(),
        0.5f64..2.0,
        -0.5f64..0.5,
        0.0f64..0.5,
        0.0f64..0.3,
        any::<u64>(),
    )
        .prop_map(|(prefs, level, vol, ratio, shift, seed)| ComparisonCase {
            prefs,
            level,
            vol,
            ratio,
            shift,
            seed,
        })
}

/// `c1 <= c2` node-wise implies `U0(c1) <= U0(c2)` within 2 SE.
pub fn check_comparison(k: &ComparisonCase) -> Result<(), TestCaseError> {
    let (g, psi, d) = k.prefs;
    let prefs = EzPreferences::new(g, psi, d).map_err(fail)?;
    let bundle = small_bundle(k.seed, 200, 10);
    let state = StateProcess::brownian(&bundle);
    let c1 = exp_stream(&state, k.level, k.vol);
    let c2 = ConsumptionStream::new(c1.values().mapv(|v| v * (1.0 + k.ratio) + k.shift), "dominating").map_err(fail)?;
    let opts = SolverOptions::default();
    let u1 = evaluate_utility(&prefs, &c1, &bundle, &state, None, &opts).map_err(fail)?;
    let u2 = evaluate_utility(&prefs, &c2, &bundle, &state, None, &opts).map_err(fail)?;
    prop_assert!(
        u1.u0 <= u2.u0 + 2.0 * (u1.se + u2.se),
        "U0(c1) = {} > U0(c2) = {}",
        u1.u0,
        u2.u0
    );
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ConcavityCase {
    pub prefs: (f64, f64, f64),
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub lambda: f64,
    pub seed: u64,
}

pub fn concavity_strategy() -> impl Strategy<Value = ConcavityCase> {
    (
        prefs_strategy(),
        (0.5f64..2.0, -0.5f64..0.5),
        (0.5f64..2.0, -0.5f64..0.5),
        0.1f64..0.9,
        any::<u64>(),
    )
        .prop_map(|(prefs, a, b, lambda, seed)| ConcavityCase {
            prefs,
            a,
            b,
            lambda,
            seed,
        })
}

/// Concavity surplus and the lower bound `eta0` are nonnegative within 2 SE.
pub fn check_concavity(k: &ConcavityCase) -> Result<(), TestCaseError> {
    let (g, psi, d) = k.prefs;
    let prefs = EzPreferences::new(g, psi, d).map_err(fail)?;
    let bundle = small_bundle(k.seed, 200, 10);
    let state = StateProcess::brownian(&bundle);
    let c1 = exp_stream(&state, k.a.0, k.a.1);
    let c2 = exp_stream(&state, k.b.0, k.b.1);
    let r = concavity_gap(&prefs, &c1, &c2, k.lambda, &bundle, &state, &SolverOptions::default()).map_err(fail)?;
    prop_assert!(
        r.direct_surplus >= -2.0 * r.direct_se,
        "surplus {} (se {})",
        r.direct_surplus,
        r.direct_se
    );
    prop_assert!(r.eta0 >= -2.0 * r.eta0_se, "eta0 {} (se {})", r.eta0, r.eta0_se);
    Ok(())
}

/// Closed-form surplus `U0(1) - U0(0.8)/2 - U0(1.2)/2 = 1/24` of the fixture.
/// Returns `(surplus, se, allowance)`; the allowance is the time-discretisation
/// bias budget `DISCRETISATION_ALLOWANCE * dt * |U|`.
pub fn closed_form_surplus(n_steps: usize) -> (f64, f64, f64) {
    let prefs = fixture_prefs();
    let bundle = small_bundle(1, 100, n_steps);
    let state = StateProcess::empty(100, n_steps + 1);
    let grid = bundle.grid().clone();
    let c1 = ConsumptionStream::constant(0.8, 100, &grid).unwrap();
    let c2 = ConsumptionStream::constant(1.2, 100, &grid).unwrap();
    let r = concavity_gap(&prefs, &c1, &c2, 0.5, &bundle, &state, &SolverOptions::default()).unwrap();
    let u_scale = 0.5 * (1.0 / 0.8 + 1.0 / 1.2);
    (r.direct_surplus, r.direct_se, DISCRETISATION_ALLOWANCE * grid.dt() * u_scale)
}

#[derive(Debug, Clone)]
pub struct LadderCase {
    pub prefs: (f64, f64, f64),
    pub level: f64,
    pub vol: f64,
    pub seed: u64,
}

pub fn ladder_strategy() -> impl Strategy<Value = LadderCase> {
    (prefs_strategy(), 0.5f64..2.0, -0.5f64..0.5, any::<u64>()).prop_map(|(prefs, level, vol, seed)| LadderCase {
        prefs,
        level,
        vol,
        seed,
    })
}

/// Value nonincreasing in `m` at fixed `n` within 2 SE; identical solutions once
/// `m` exceeds the data bound.
pub fn check_ladder(k: &LadderCase) -> Result<(), TestCaseError> {
    let (g, psi, d) = k.prefs;
    let prefs = EzPreferences::new(g, psi, d).map_err(fail)?;
    let bundle = small_bundle(k.seed, 200, 10);
    let state = StateProcess::brownian(&bundle);
    let c = exp_stream(&state, k.level, k.vol);
    let terminal = utility_terminal(&prefs, &c, 1.0);
    let cap = default_truncation(GeneratorKind::UtilityY, &prefs, &terminal, c.values());
    let levels: Vec<Truncation> = [0.05, 0.2, 0.5, 1.0, 2.0, 8.0]
        .iter()
        .map(|s| Truncation {
            n_level: cap.n_level,
            m_level: s * cap.m_level,
        })
        .collect();
    let l = truncation_ladder(
        GeneratorKind::UtilityY,
        &prefs,
        &terminal,
        c.values(),
        &bundle,
        &state,
        &levels,
        &SolverOptions::default(),
    )
    .map_err(fail)?;
    for w in l.solutions.windows(2) {
        prop_assert!(
            w[1].value0 <= w[0].value0 + 2.0 * (w[0].se + w[1].se),
            "value0 rises with m: {} -> {}",
            w[0].value0,
            w[1].value0
        );
    }
    let n = l.sup_diffs.len();
    prop_assert!(
        l.sup_diffs[n - 1] == 0.0 && l.sup_diffs[n - 2] == 0.0,
        "saturated levels differ: {:?}",
        l.sup_diffs
    );
    prop_assert_eq!(l.solutions[n].saturated_nodes, 0);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct MarketCase {
    pub prefs: (f64, f64, f64),
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub seed: u64,
}

/// Oracle markets with the fixture preferences.
pub fn market_strategy() -> impl Strategy<Value = MarketCase> {
    (Just((2.0, 2.0, 0.1)), 0.0f64..0.05, 0.0f64..0.08, 0.15f64..0.4, any::<u64>()).prop_map(|(prefs, r, mu, sigma, seed)| {
        MarketCase {
            prefs,
            r,
            mu,
            sigma,
            seed,
        }
    })
}

/// Which of the three constructed deflation cases to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeflationCase {
    /// Optimizer with its utility-gradient density: martingale.
    Optimizer,
    /// Half the optimal consumption out of the optimal wealth, minimal SPD:
    /// strict supermartingale; also the SPD discounted at 5%.
    HalfRatio,
    /// `D = 1`, no consumption, riskless wealth at zero rate: exactly constant.
    Trivial,
}

pub fn check_deflation(case: DeflationCase, k: &MarketCase) -> Result<(), TestCaseError> {
    let (g, psi, d) = k.prefs;
    let prefs = EzPreferences::new(g, psi, d).map_err(fail)?;
    let bundle = small_bundle(k.seed, 1000, 20);
    let grid = bundle.grid().clone();
    match case {
        DeflationCase::Optimizer => {
            let fam = PerturbationFamily::rate_shift(k.r, k.mu, k.sigma, 0.0, 1.0).map_err(fail)?;
            let base = base_solution(&prefs, &fam, 1.0, &bundle, &SolverOptions::default()).map_err(fail)?;
            let dd =
                utility_gradient_density(&prefs, &base.c_hat, &base.utility.u_path, base.oracle.y_star, &grid).map_err(fail)?;
            let chk = martingale_deflation_check_discretised(&dd, base.wealth.values(), &base.c_hat, &grid, bundle.sampling())
                .map_err(fail)?;
            prop_assert!(
                chk.is_martingale && chk.is_supermartingale,
                "optimizer flags {:?} / {:?}",
                chk.drift,
                chk.se
            );
        }
        DeflationCase::HalfRatio => {
            let fam = PerturbationFamily::rate_shift(k.r, k.mu, k.sigma, 0.0, 1.0).map_err(fail)?;
            let base = base_solution(&prefs, &fam, 1.0, &bundle, &SolverOptions::default()).map_err(fail)?;
            let spd = minimal_spd_path(fam.base(), &bundle).map_err(fail)?;
            let half = ConsumptionStream::new(base.c_hat.values().mapv(|v| 0.5 * v), "half").map_err(fail)?;
            let chk = martingale_deflation_check(&spd, base.wealth.values(), &half, &grid, bundle.sampling()).map_err(fail)?;
            prop_assert!(
                chk.is_supermartingale && !chk.is_martingale,
                "half consumption flags {:?} / {:?}",
                chk.drift,
                chk.se
            );
            let strict = Array2::from_shape_fn(spd.dim(), |(p, i)| spd[[p, i]] * (-0.05 * grid.t(i)).exp());
            let chk =
                martingale_deflation_check(&strict, base.wealth.values(), &base.c_hat, &grid, bundle.sampling()).map_err(fail)?;
            prop_assert!(
                chk.is_supermartingale && !chk.is_martingale,
                "discounted SPD flags {:?} / {:?}",
                chk.drift,
                chk.se
            );
        }
        DeflationCase::Trivial => {
            let model = MarketModel::constant_1d(0.0, 0.0, k.sigma).map_err(fail)?;
            let zero = nalgebra::DVector::from_element(1, 0.0);
            let ratio = vec![0.0; grid.n_nodes()];
            let (w, c) = simulate_wealth(
                &model,
                Arc::new(ConstantWeights(zero)),
                ConsumptionPolicy::Ratio(&ratio),
                1.0 + k.r,
                &bundle,
            )
            .map_err(fail)?;
            let ones = Array2::from_elem((bundle.n_paths(), grid.n_nodes()), 1.0);
            let chk = martingale_deflation_check(&ones, w.values(), &c, &grid, bundle.sampling()).map_err(fail)?;
            prop_assert!(chk.max_abs_drift() <= 1e-12, "drift {}", chk.max_abs_drift());
            prop_assert!(chk.is_martingale && chk.is_supermartingale);
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct NEpsCase {
    pub r: f64,
    pub mu: f64,
    pub sigma: f64,
    pub shift: f64,
    pub eps: f64,
    pub n_steps: usize,
    pub seed: u64,
}

pub fn n_eps_strategy() -> impl Strategy<Value = NEpsCase> {
    (
        0.0f64..0.05,
        0.0f64..0.08,
        0.15f64..0.4,
        0.01f64..1.0,
        0.0f64..1.0,
        10usize..100,
        any::<u64>(),
    )
        .prop_map(|(r, mu, sigma, shift, eps, n_steps, seed)| NEpsCase {
            r,
            mu,
            sigma,
            shift,
            eps,
            n_steps,
            seed,
        })
}

/// Rate shift: `N = exp(-a eps t)` to 1e-12. Drift shift: log-error at most `5 dt`.
pub fn check_n_eps(k: &NEpsCase) -> Result<(), TestCaseError> {
    let bundle = small_bundle(k.seed, 50, k.n_steps);
    let grid = bundle.grid().clone();
    let rate = PerturbationFamily::rate_shift(k.r.max(k.shift * k.eps), k.mu, k.sigma, k.shift, 1.0).map_err(fail)?;
    let n = n_eps_path(&rate, k.eps, &bundle).map_err(fail)?;
    for ((_, i), v) in n.indexed_iter() {
        let exact = (-k.shift * k.eps * grid.t(i)).exp();
        prop_assert!((v - exact).abs() <= 1e-12, "rate shift node {i}: {v} vs {exact}");
    }
    let drift = PerturbationFamily::drift_shift(k.r, k.mu, k.sigma, k.shift, 1.0).map_err(fail)?;
    let n = n_eps_path(&drift, k.eps, &bundle).map_err(fail)?;
    let w = StateProcess::brownian(&bundle);
    let lam = k.shift * k.eps / (k.sigma * k.sigma);
    for ((p, i), v) in n.indexed_iter() {
        let t = grid.t(i);
        let exact = -lam * k.mu * t - lam * k.sigma * w.0[[p, i, 0]] - 0.5 * lam * lam * k.sigma * k.sigma * t;
        prop_assert!(
            (v.ln() - exact).abs() <= 5.0 * grid.dt(),
            "drift shift node {i}: {} vs {exact}",
            v.ln()
        );
    }
    Ok(())
}

/// Runs `check` over [`CASES`] deterministic draws of `strategy`.
pub fn run_property<S: Strategy>(strategy: S, check: impl Fn(&S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner().run(&strategy, |v| check(&v)).map_err(|e| e.to_string())
}

/// Number of failing cases among [`CASES`] deterministic draws.
pub fn count_failures<S: Strategy>(strategy: S, check: impl Fn(&S::Value) -> Result<(), TestCaseError>) -> (usize, Vec<String>)
where
    S::Value: std::fmt::Debug,
{
    let mut runner = runner();
    let mut fails = Vec::new();
    for _ in 0..CASES {
        let v = strategy.new_tree(&mut runner).expect("strategy").current();
        if let Err(e) = check(&v) {
            fails.push(format!("{e}"));
        }
    }
    (fails.len(), fails)
}
