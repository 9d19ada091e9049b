//! Utility of constant consumption by least-squares Monte Carlo.
use ezstab::bsde::{evaluate_utility, SolverOptions};
use ezstab::paths::{make_bundle, ConsumptionStream, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;
use ezstab::regression::StateProcess;

fn main() -> ezstab::Result<()> {
    let grid = TimeGrid::new(1.0, 50)?;
    let bundle = make_bundle(1, 10_000, &grid, 1, Sampling::Antithetic)?;
    let state = StateProcess::brownian(&bundle);
    let opts = SolverOptions::default();
    for (gamma, psi, c) in [(2.0, 2.0, 1.0), (2.0, 2.0, 2.0), (4.0, 1.5, 1.0)] {
        let prefs = EzPreferences::new(gamma, psi, 0.1)?;
        let stream = ConsumptionStream::constant(c, bundle.n_paths(), &grid)?;
        let ev = evaluate_utility(&prefs, &stream, &bundle, &state, None, &opts)?;
        let exact = c.powf(1.0 - gamma) / (1.0 - gamma);
        println!(
            "gamma={gamma} psi={psi} c={c}: U0 = {:.6} (se {:.1e}), c^(1-gamma)/(1-gamma) = {exact:.6}",
            ev.u0, ev.se
        );
    }
    Ok(())
}
