//! Dual value of a constant deflator against a high-accuracy ODE.
use ezstab::bsde::{evaluate_dual, SolverOptions};
use ezstab::paths::{make_bundle, Sampling, TimeGrid};
use ezstab::preferences::{bequest_dual, dual_aggregator, EzPreferences};
use ezstab::regression::StateProcess;
use ndarray::Array2;

fn ode(prefs: &EzPreferences, d: f64, steps: usize) -> ezstab::Result<f64> {
    let g = prefs.gamma();
    let h = 1.0 / steps as f64;
    let rhs = |v: f64| dual_aggregator(prefs, d, v / g);
    let mut v = bequest_dual(prefs, d)?;
    for _ in 0..steps {
        let k1 = rhs(v)?;
        let k2 = rhs(v + 0.5 * h * k1)?;
        let k3 = rhs(v + 0.5 * h * k2)?;
        let k4 = rhs(v + h * k3)?;
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(v)
}

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    for steps in [25, 50, 100, 200] {
        let grid = TimeGrid::new(1.0, steps)?;
        let bundle = make_bundle(1, 100, &grid, 1, Sampling::Antithetic)?;
        let state = StateProcess::empty(100, steps + 1);
        for d in [1.0, 4.0] {
            let dd = Array2::from_elem((100, steps + 1), d);
            let ev = evaluate_dual(&prefs, &dd, &bundle, &state, None, &SolverOptions::default())?;
            let exact = ode(&prefs, d, 10_000)?;
            println!(
                "steps={steps:>3} D={d}: V0 = {:.8}, ODE = {exact:.8}, error {:.2e}",
                ev.v0,
                ev.v0 - exact
            );
        }
    }
    Ok(())
}
