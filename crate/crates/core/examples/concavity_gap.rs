//! Concavity surplus of the utility functional on a mixture of two streams.
use ezstab::bsde::{concavity_gap, SolverOptions};
use ezstab::paths::{make_bundle, ConsumptionStream, Sampling, TimeGrid};
use ezstab::preferences::EzPreferences;
use ezstab::regression::StateProcess;
use ndarray::Array2;

fn main() -> ezstab::Result<()> {
    let prefs = EzPreferences::new(2.0, 2.0, 0.1)?;
    let grid = TimeGrid::new(1.0, 50)?;
    let bundle = make_bundle(3, 2000, &grid, 1, Sampling::Antithetic)?;
    let opts = SolverOptions::default();

    // deterministic pair: surplus U(1) - U(0.8)/2 - U(1.2)/2 = 1/24
    let c1 = ConsumptionStream::constant(0.8, 2000, &grid)?;
    let c2 = ConsumptionStream::constant(1.2, 2000, &grid)?;
    let state = StateProcess::empty(2000, 51);
    let g = concavity_gap(&prefs, &c1, &c2, 0.5, &bundle, &state, &opts)?;
    println!(
        "deterministic: surplus {:.6} (1/24 = {:.6}), eta0 {:.6}, eta_bar {:.6}",
        g.direct_surplus,
        1.0 / 24.0,
        g.eta0,
        g.eta_bar
    );

    // stochastic pair driven by the Brownian state
    let w = StateProcess::brownian(&bundle);
    let a = Array2::from_shape_fn((2000, 51), |(p, i)| (0.3 * w.0[[p, i, 0]]).exp());
    let b = Array2::from_shape_fn((2000, 51), |(p, i)| 1.5 * (-0.2 * w.0[[p, i, 0]]).exp());
    let c1 = ConsumptionStream::new(a, "exp(0.3 W)")?;
    let c2 = ConsumptionStream::new(b, "1.5 exp(-0.2 W)")?;
    let g = concavity_gap(&prefs, &c1, &c2, 0.3, &bundle, &w, &opts)?;
    println!(
        "stochastic: surplus {:.6} (se {:.1e}), eta0 {:.6} (se {:.1e}), negative xi fraction {:.2e}",
        g.direct_surplus, g.direct_se, g.eta0, g.eta0_se, g.negative_xi_fraction
    );
    Ok(())
}
